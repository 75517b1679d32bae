import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlspipe.cloud import PointCloud
from mlspipe.segment import NONE, SegmentSet, export_labeled, segment_connected
from mlspipe.synth import CAR, SceneObject, SceneSpec, generate

from conftest import canonical


def union_find_labels(xyz, cell):
    """Quadratic oracle: union every pair of points in 26-adjacent voxels."""
    keys = np.floor(xyz / cell).astype(np.int64)
    parent = list(range(len(xyz)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(xyz)):
        close = np.flatnonzero(np.abs(keys[i + 1:] - keys[i]).max(axis=1) <= 1) + i + 1
        for j in close:
            a, b = find(i), find(int(j))
            if a != b:
                parent[max(a, b)] = min(a, b)
    return np.array([find(i) for i in range(len(xyz))])


def blob(rng, centre, n, scale=0.05):
    return rng.normal(scale=scale, size=(n, 3)) + centre


def test_two_far_clusters():
    rng = np.random.default_rng(0)
    xyz = np.vstack([blob(rng, [0, 0, 0], 100), blob(rng, [2.0 + 2.0, 0, 0], 80)])
    cloud = PointCloud.from_arrays(xyz)
    seg = segment_connected(cloud, np.arange(len(xyz)), 0.2, 1)
    assert len(seg) == 2
    # size descending
    assert [len(s) for s in seg.segments] == [100, 80]


def test_single_cluster():
    rng = np.random.default_rng(1)
    cloud = PointCloud.from_arrays(blob(rng, [1, 1, 1], 300))
    seg = segment_connected(cloud, np.arange(300), 0.2, 1)
    assert len(seg) == 1 and len(seg.segments[0]) == 300


@pytest.mark.parametrize("seed", range(5))
def test_matches_union_find(seed):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0, 3, size=(400, 3))
    seg = segment_connected(PointCloud.from_arrays(xyz), np.arange(400), 0.2, 1)
    cloud_xyz = PointCloud.from_arrays(xyz).xyz
    assert np.array_equal(canonical(seg.segment_of), canonical(union_find_labels(cloud_xyz, 0.2)))


def test_min_points_bucket_and_partition():
    rng = np.random.default_rng(2)
    xyz = np.vstack([blob(rng, [0, 0, 0], 60), blob(rng, [5, 0, 0], 10)])
    cloud = PointCloud.from_arrays(xyz)
    non_ground = np.arange(5, 70)
    seg = segment_connected(cloud, non_ground, 0.2, 50)
    assert len(seg) == 1
    assert (seg.segment_of[:5] == NONE).all()
    assert (seg.segment_of[60:] == NONE).all()
    assert seg.segments[0].tolist() == list(range(5, 60))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 250), st.integers(0, 2 ** 31))
def test_partition_property_and_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0, 2, size=(n, 3)).astype(np.float32)
    subset = np.flatnonzero(rng.random(n) < 0.8)
    seg = segment_connected(PointCloud.from_arrays(xyz), subset, 0.2, 1)
    allpts = np.concatenate(seg.segments) if len(seg) else np.zeros(0, int)
    assert sorted(allpts.tolist()) == subset.tolist()
    assert all(len(s) for s in seg.segments)

    perm = rng.permutation(n)
    inv = np.argsort(perm)
    seg2 = segment_connected(PointCloud.from_arrays(xyz[perm]), inv[subset], 0.2, 1)
    relabeled = seg2.segment_of[inv]
    assert np.array_equal(canonical(relabeled), canonical(seg.segment_of))


def test_close_cars_merge():
    gap = 0.1  # below the 0.2 m voxel
    cars = [SceneObject("box", 6.0, 2.0, (4.0, 1.8, 1.5), CAR),
            SceneObject("box", 6.0 + 4.0 + gap, 2.0, (4.0, 1.8, 1.5), CAR)]
    cloud = generate(SceneSpec(length=16, width=8, density=800, seed=0, objects=cars))
    non_ground = np.flatnonzero(cloud.label != 0)
    seg = segment_connected(cloud, non_ground, 0.2, 50)
    assert len(seg) == 1


def test_export_labeled_and_from_labels():
    rng = np.random.default_rng(4)
    xyz = np.vstack([blob(rng, [0, 0, 0], 60), blob(rng, [3, 0, 0], 70)])
    cloud = PointCloud.from_arrays(xyz, class_id=np.full(130, 7))
    seg = segment_connected(cloud, np.arange(2, 130), 0.2, 10)
    out = export_labeled(cloud, [0, 1], seg)
    assert out.label[:2].tolist() == [0, 0]
    assert set(out.label[60:].tolist()) == {1} and set(out.label[2:60].tolist()) == {2}
    assert (out.class_id == 7).all()
    back = SegmentSet.from_labels(out.label)
    assert [s.tolist() for s in back.segments] == [list(range(60, 130)), list(range(2, 60))]
