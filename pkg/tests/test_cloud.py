import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlspipe.cloud import (ElevationImage, PointCloud, adjacent_pairs, build_voxel_grid,
                           elevation_at, fill_holes, rasterize_ground, smooth)
from mlspipe.errors import EmptyInput, InvalidParameter, PreconditionViolation


def image(values, cell=0.1, origin=(0.0, 0.0)):
    values = np.asarray(values, dtype=np.float64)
    return ElevationImage(cell, origin, values, ~np.isnan(values))


def test_single_point_single_cell():
    cloud = PointCloud.from_arrays([[0.05, 0.05, 0.05]])
    grid = build_voxel_grid(cloud, cell_size=0.1)
    assert len(grid) == 1
    assert list(grid[(0, 0, 0)]) == [0]


def test_boundary_quantization():
    cloud = PointCloud.from_arrays([[0.05, 0, 0], [0.15, 0, 0]])
    grid = build_voxel_grid(cloud, cell_size=0.1)
    assert len(grid) == 2
    assert list(grid[(0, 0, 0)]) == [0] and list(grid[(1, 0, 0)]) == [1]


def test_count_conservation_random():
    rng = np.random.default_rng(0)
    xyz = rng.uniform(-3, 3, size=(1000, 3))
    grid = build_voxel_grid(xyz, cell_size=0.2)
    assert grid.counts.sum() == 1000
    assert sorted(grid.indices.tolist()) == list(range(1000))
    for key, idx in grid.items():
        assert (np.floor(xyz[idx] / 0.2).astype(int) == key).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 300), st.floats(0.01, 2.0), st.integers(0, 2 ** 31))
def test_voxel_partition_property(n, cell, seed):
    rng = np.random.default_rng(seed)
    xyz = rng.normal(scale=2.0, size=(n, 3))
    subset = rng.permutation(n)[: n // 2]
    grid = build_voxel_grid(xyz, subset, cell)
    assert grid.counts.sum() == len(subset)
    assert np.array_equal(np.sort(grid.indices), np.sort(subset))


def test_voxel_rejects_bad_cell_size():
    with pytest.raises(InvalidParameter):
        build_voxel_grid(np.zeros((3, 3)), cell_size=0.0)
    with pytest.raises(InvalidParameter):
        build_voxel_grid(np.zeros((3, 3)), cell_size=-1.0)


def test_adjacent_pairs_matches_brute_force():
    rng = np.random.default_rng(3)
    keys = np.unique(rng.integers(-3, 4, size=(120, 3)), axis=0)
    a, b = adjacent_pairs(keys)
    got = {tuple(sorted(p)) for p in zip(a.tolist(), b.tolist())}
    want = set()
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if np.abs(keys[i] - keys[j]).max() <= 1:
                want.add((i, j))
    assert got == want


def test_rasterize_min_and_mean():
    xyz = np.array([[0.01, 0.01, 1.0], [0.02, 0.03, 3.0], [0.25, 0.01, 5.0]])
    img = rasterize_ground(xyz, [0, 1, 2], 0.1)
    assert img.elevation.shape == (1, 3)
    assert img.elevation[0, 0] == 1.0 and img.elevation[0, 2] == 5.0
    assert np.isnan(img.elevation[0, 1])
    mean = rasterize_ground(xyz, [0, 1, 2], 0.1, aggregate="mean")
    assert mean.elevation[0, 0] == 2.0


def test_rasterize_empty_ground():
    with pytest.raises(EmptyInput):
        rasterize_ground(np.zeros((3, 3)), [], 0.1)


def test_fill_single_value_propagates():
    vals = np.full((4, 5), np.nan)
    vals[2, 3] = 3.0
    assert (fill_holes(image(vals)).elevation == 3.0).all()


def brute_fill(vals):
    out = vals.copy()
    known = [(r, c) for r in range(vals.shape[0]) for c in range(vals.shape[1])
             if not np.isnan(vals[r, c])]
    for r in range(vals.shape[0]):
        for c in range(vals.shape[1]):
            if np.isnan(vals[r, c]):
                # scan order gives the (row, col) tie rule for free
                best = min(known, key=lambda k: (k[0] - r) ** 2 + (k[1] - c) ** 2)
                out[r, c] = vals[best]
    return out


def test_fill_opposite_corners_matches_brute_force():
    vals = np.full((7, 9), np.nan)
    vals[0, 0], vals[6, 8] = 1.0, 2.0
    assert np.array_equal(fill_holes(image(vals)).elevation, brute_fill(vals))


@pytest.mark.parametrize("seed", range(8))
def test_fill_random_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    vals = np.where(rng.random((12, 15)) < 0.1, rng.normal(size=(12, 15)), np.nan)
    vals[rng.integers(12), rng.integers(15)] = 7.0
    got = fill_holes(image(vals))
    assert np.array_equal(got.elevation, brute_fill(vals))
    # idempotent
    assert np.array_equal(fill_holes(got).elevation, got.elevation)


def test_fill_identity_and_all_empty():
    vals = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(fill_holes(image(vals)).elevation, vals)
    with pytest.raises(EmptyInput):
        fill_holes(image(np.full((2, 2), np.nan)))


def test_smooth_identity_constant_and_centre():
    vals = np.random.default_rng(1).normal(size=(5, 6))
    assert np.array_equal(smooth(image(vals), 0).elevation, vals)
    const = smooth(image(np.full((6, 7), 2.5)), 3)
    assert np.allclose(const.elevation, 2.5, atol=1e-12)
    assert const.elevation.shape == (6, 7)
    grid = np.zeros((3, 3))
    grid[1, 1] = 9.0
    assert smooth(image(grid), 1).elevation[1, 1] == pytest.approx(1.0)


def test_smooth_rejects_holes():
    vals = np.zeros((3, 3))
    vals[0, 0] = np.nan
    with pytest.raises(PreconditionViolation):
        smooth(image(vals), 1)


def test_elevation_at_clamps():
    img = image([[1.0, 2.0], [3.0, 4.0]], cell=1.0)
    assert elevation_at(img, 0.5, 0.5) == 1.0
    assert elevation_at(img, 1.5, 1.5) == 4.0
    assert elevation_at(img, -10.0, 0.2) == 1.0
    assert elevation_at(img, 50.0, 50.0) == 4.0


def test_cloud_subset_and_copy():
    cloud = PointCloud.from_arrays(np.arange(12.0).reshape(4, 3), label=[1, 2, 3, 4])
    sub = cloud.subset([3, 1])
    assert sub.label.tolist() == [4, 2]
    cp = cloud.copy()
    cp.points["label"][0] = 99
    assert cloud.label[0] == 1
