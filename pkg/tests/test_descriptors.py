import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlspipe.cloud import PointCloud, fill_holes, rasterize_ground, smooth
from mlspipe.descriptors import (BLOCK_SIZES, DescriptorConfig, DescriptorTable,
                                 context_elevation, describe, describe_segments, esf,
                                 geom_features, grsd, parse_layout, read_descriptor_table,
                                 write_descriptor_table)
from mlspipe.descriptors.core import object_seed
from mlspipe.descriptors.esf import N_SUB, sub_histogram
from mlspipe.descriptors.grsd import PLANE, pair_bin
from mlspipe.errors import InvalidParameter

FAST = DescriptorConfig(esf_samples=500)


def box_surface(rng, size, n):
    """Uniform-by-area samples on the surface of an axis-aligned box."""
    lx, ly, lz = size
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])
    face = rng.choice(6, n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    pts = np.zeros((n, 3))
    axis = face // 2
    side = face % 2
    for a in range(3):
        others = [k for k in range(3) if k != a]
        m = axis == a
        pts[m, a] = side[m] * size[a]
        pts[m, others[0]] = u[m] * size[others[0]]
        pts[m, others[1]] = v[m] * size[others[1]]
    return pts


def sphere_surface(rng, n, r=1.0):
    d = rng.normal(size=(n, 3))
    return r * d / np.linalg.norm(d, axis=1, keepdims=True)


def test_geom_single_point():
    f = geom_features([[1.0, 2.0, 3.0]], [50])
    assert f[0] == 0.0
    assert f[1:4].tolist() == [0.0, 0.0, 0.0]
    assert np.allclose(f[5:8], 1 / 3)
    assert f[8] == 0.0 and f[9] == 0.0
    assert f[10] == 50 and f[11] == 0.0


def test_geom_box_extents():
    pts = box_surface(np.random.default_rng(0), (1.0, 2.0, 3.0), 20000)
    f = geom_features(pts)
    assert np.allclose(f[1:4], [1, 2, 3], atol=0.01)
    assert f[4] == pytest.approx(np.log1p(6.0), abs=0.02)


def test_geom_line_linearity():
    t = np.linspace(0, 5, 200)[:, None]
    pts = t * [1.0, 2.0, 0.5] + np.random.default_rng(1).normal(scale=1e-3, size=(200, 3))
    assert geom_features(pts)[8] >= 0.95


def test_geom_reflectance_stats():
    refl = np.array([10, 20, 30, 40])
    f = geom_features(np.random.default_rng(2).random((4, 3)), refl)
    assert f[10] == 25.0 and f[11] == pytest.approx(np.std(refl))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2 ** 31), st.sampled_from(["gauss", "line", "plane"]))
def test_geom_eigenvalues_ordered(n, seed, kind):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    if kind == "line":
        pts = rng.normal(size=(n, 1)) * [1.0, -2.0, 3.0]
    elif kind == "plane":
        pts[:, 2] = 0.0
    lam = geom_features(pts)[5:8]
    assert np.isfinite(lam).all()
    assert lam[0] >= lam[1] >= lam[2] >= 0
    assert abs(lam.sum() - 1.0) <= 1e-9


def test_grsd_plane_dominates():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(0, 5, 20000), rng.uniform(0, 5, 20000),
                           rng.normal(scale=0.002, size=20000)])
    h = grsd(pts)
    assert h[pair_bin(PLANE, PLANE)] > 0.5
    assert h.sum() == pytest.approx(1.0, abs=1e-12)


def test_grsd_translation_and_degenerate():
    pts = np.random.default_rng(4).random((500, 3)).astype(np.float32).astype(np.float64)
    assert np.array_equal(grsd(pts), grsd(pts + [128.0, -64.0, 256.0]))
    one = grsd([[1.0, 2.0, 3.0]])
    assert np.allclose(one, 1 / 21)
    two = grsd([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]])
    assert two.sum() == pytest.approx(1.0)


def test_esf_sphere_d2_support():
    pts = sphere_surface(np.random.default_rng(5), 5000)
    h = esf(pts, 20000, 0)
    diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    last = int(2.0 / diag * N_SUB)
    d2 = sum(sub_histogram(h, k) for k in range(3))
    assert d2[last + 1:].sum() == 0.0
    assert d2.sum() > 0


def test_esf_deterministic_and_normalised():
    pts = box_surface(np.random.default_rng(6), (1.0, 0.5, 2.0), 3000)
    a, b = esf(pts, 4000, 7), esf(pts, 4000, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, esf(pts, 4000, 8))
    assert a.sum() == pytest.approx(1.0, abs=1e-12)
    for k in range(10):
        assert sub_histogram(a, k).min() >= 0


def test_esf_scale_normalisation():
    pts = box_surface(np.random.default_rng(7), (1.0, 0.5, 2.0), 3000)
    a, b = esf(pts, 20000, 1), esf(pts * 2.0, 20000, 1)
    d2a = sum(sub_histogram(a, k) for k in range(3))
    d2b = sum(sub_histogram(b, k) for k in range(3))
    assert np.abs(d2a - d2b).sum() < 0.02


def test_esf_degenerate():
    assert np.allclose(esf([[0, 0, 0], [1, 1, 1]]), 1 / 640)


def ground_image(fn, extent=(0, 0, 10, 10), cell=0.1):
    xs, ys = np.meshgrid(np.arange(extent[0], extent[2], 0.05), np.arange(extent[1], extent[3], 0.05))
    xyz = np.column_stack([xs.ravel(), ys.ravel(), fn(xs.ravel(), ys.ravel())])
    img = rasterize_ground(xyz, np.arange(len(xyz)), cell)
    return smooth(fill_holes(img), 2)


def test_context_flat_lifted_and_sloped():
    rng = np.random.default_rng(8)
    flat = ground_image(lambda x, y: np.zeros_like(x))
    obj = box_surface(rng, (1.0, 1.0, 1.5), 3000) + [4.0, 4.0, 0.0]
    assert abs(context_elevation(obj, flat)) <= 0.05
    assert context_elevation(obj + [0, 0, 0.5], flat) == pytest.approx(0.5, abs=0.05)
    slope = ground_image(lambda x, y: 0.1 * x + 100.0)
    obj = box_surface(rng, (0.4, 0.4, 1.0), 2000) + [5.0, 5.0, 0.0]
    obj[:, 2] += 0.1 * 4.8 + 100.0  # lowest corner touches the slope
    assert abs(context_elevation(obj, slope)) <= 0.05


def test_describe_layout_and_blocks():
    pts = box_surface(np.random.default_rng(9), (1, 1, 1), 800)
    img = ground_image(lambda x, y: np.zeros_like(x), (-1, -1, 2, 2))
    full = describe(pts, None, FAST, img)
    assert len(full.values) == sum(BLOCK_SIZES.values())
    assert full.layout == "mlspipe-desc/1:GEOM12,GRSD21,ESF640,CONTEXT1"
    cfg = DescriptorConfig(blocks=("ESF", "GEOM"), esf_samples=500)
    part = describe(pts, None, cfg)
    assert part.layout == "mlspipe-desc/1:GEOM12,ESF640"
    assert np.array_equal(part.block("GEOM"), full.block("GEOM"))
    assert np.array_equal(part.block("ESF"), full.block("ESF"))
    assert parse_layout(part.layout) == {"GEOM": (0, 12), "ESF": (12, 652)}
    with pytest.raises(InvalidParameter):
        describe(pts, None, DescriptorConfig(blocks=("CONTEXT",)))
    with pytest.raises(InvalidParameter):
        DescriptorConfig(blocks=("CVFH",))


def test_describe_translation_invariance():
    rng = np.random.default_rng(10)
    pts = box_surface(rng, (1.2, 0.8, 1.6), 1500).astype(np.float32).astype(np.float64) + 2.0
    # dyadic ground mesh so that the shifted copy is exact
    xs, ys = np.meshgrid(np.arange(0, 6, 1 / 32), np.arange(0, 6, 1 / 32))
    ground = np.column_stack([xs.ravel(), ys.ravel(), 0.125 * xs.ravel()])
    shift = np.array([512.0, -256.0, 64.0])
    imgs = [smooth(fill_holes(rasterize_ground(g, np.arange(len(g)), 0.1)), 2)
            for g in (ground, ground + shift)]
    a = describe(pts, None, FAST, imgs[0])
    b = describe(pts + shift, None, FAST, imgs[1])
    assert np.array_equal(a.values[:-1], b.values[:-1])
    assert a.values[-1] == pytest.approx(b.values[-1], abs=1e-9)


def test_subsampling_and_seeding():
    pts = np.random.default_rng(11).random((3000, 3))
    cfg = DescriptorConfig(blocks=("GRSD", "ESF"), esf_samples=300, subsample_max=1000, seed=5)
    a = describe(pts, None, cfg, segment_id=3)
    assert np.array_equal(a.values, describe(pts, None, cfg, segment_id=3).values)
    assert not np.array_equal(a.values, describe(pts, None, cfg, segment_id=4).values)
    assert object_seed(5, 3) == 6


def test_describe_segments_threads_agree():
    rng = np.random.default_rng(12)
    xyz = rng.random((900, 3)) * 3
    cloud = PointCloud.from_arrays(xyz, reflectance=rng.integers(0, 255, 900))
    segs = [np.arange(0, 300), np.arange(300, 700), np.arange(700, 900)]
    cfg = DescriptorConfig(blocks=("GEOM", "GRSD", "ESF"), esf_samples=300)
    a = describe_segments(cloud, segs, cfg, threads=1)
    b = describe_segments(cloud, segs, cfg, threads=3)
    assert np.array_equal(a, b)


def test_descriptor_table_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    t = DescriptorTable("mlspipe-desc/1:GEOM12", rng.normal(size=(4, 12)),
                        np.array([0, 3, 5, 9]), np.array([10, 20, 10, 60]))
    path = tmp_path / "descriptors.bin"
    write_descriptor_table(path, t)
    back = read_descriptor_table(path)
    assert back.layout == t.layout
    assert np.array_equal(back.values, t.values)
    assert back.segment_ids.tolist() == [0, 3, 5, 9]
    assert back.class_ids.tolist() == [10, 20, 10, 60]
    assert (tmp_path / "descriptors.txt").read_text().startswith("row segment_id class_id\n")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 31), st.floats(1e-6, 1e4))
def test_describe_always_finite(n, seed, scale):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=scale, size=(n, 3))
    v = describe(pts, rng.integers(0, 256, n), DescriptorConfig(blocks=("GEOM", "GRSD", "ESF"),
                                                                esf_samples=64))
    assert np.isfinite(v.values).all()
    assert v.block("GRSD").sum() == pytest.approx(1.0, abs=1e-9)
    assert v.block("ESF").sum() == pytest.approx(1.0, abs=1e-9)
