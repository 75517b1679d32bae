"""Object segmentation by 26-connectivity of occupied voxels."""

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import PointCloud, adjacent_pairs, build_voxel_grid
from .errors import InvalidParameter

NONE = -1


@dataclass(frozen=True)
class SegmentSet:
    segments: List[np.ndarray]
    segment_of: np.ndarray  # per point of the cloud; NONE when unassigned

    def __len__(self):
        return len(self.segments)

    def labels(self):
        """Per-point label: segment id + 1, 0 for ground/unassigned."""
        return np.where(self.segment_of == NONE, 0, self.segment_of + 1).astype(np.uint32)

    @classmethod
    def from_labels(cls, labels):
        """Segments from a label field (0 = no object), ordered by label value."""
        labels = np.asarray(labels)
        uniq, inv = np.unique(labels, return_inverse=True)
        segment_of = np.full(len(labels), NONE, dtype=np.int64)
        segments = []
        for k, lab in enumerate(uniq):
            if lab == 0:
                continue
            idx = np.flatnonzero(inv == k)
            segment_of[idx] = len(segments)
            segments.append(idx)
        return cls(segments, segment_of)


def voxel_components(keys):
    """Connected components of occupied voxels under 26-adjacency."""
    m = len(keys)
    if m == 0:
        return 0, np.zeros(0, np.int64)
    rows, cols = adjacent_pairs(keys)
    graph = coo_matrix((np.ones(len(rows), np.int8), (rows, cols)), shape=(m, m))
    return connected_components(graph, directed=False)


def segment_connected(cloud, non_ground, cell_size=0.2, min_points=50) -> SegmentSet:
    """Partition ``non_ground`` into connected voxel components.

    Components smaller than ``min_points`` go to the NONE bucket. Segment ids
    are ordered by size (descending), then by lowest contained point index.
    """
    if not cell_size > 0:
        raise InvalidParameter(f"cell_size must be positive, got {cell_size}")
    n = len(cloud)
    non_ground = np.asarray(non_ground, dtype=np.int64)
    segment_of = np.full(n, NONE, dtype=np.int64)
    if len(non_ground) == 0:
        return SegmentSet([], segment_of)

    grid = build_voxel_grid(cloud, non_ground, cell_size)
    _, vox_comp = voxel_components(grid.cell_keys)
    comp = vox_comp[grid.subset_cell]  # component per subset point

    ncomp = int(comp.max()) + 1
    sizes = np.bincount(comp, minlength=ncomp)
    lowest = np.full(ncomp, np.iinfo(np.int64).max)
    np.minimum.at(lowest, comp, non_ground)
    keep = np.flatnonzero(sizes >= min_points)
    keep = keep[np.lexsort((lowest[keep], -sizes[keep]))]

    new_id = np.full(ncomp, NONE, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))
    segment_of[non_ground] = new_id[comp]
    order = np.argsort(segment_of, kind="stable")
    sorted_ids = segment_of[order]
    bounds = np.searchsorted(sorted_ids, np.arange(len(keep) + 1))
    segments = [order[bounds[i]:bounds[i + 1]] for i in range(len(keep))]
    return SegmentSet(segments, segment_of)


def export_labeled(cloud: PointCloud, ground, segset: SegmentSet) -> PointCloud:
    """Copy of ``cloud`` whose label field holds segment id + 1 (0 elsewhere)."""
    out = cloud.copy()
    labels = segset.labels()
    labels[np.asarray(ground, dtype=np.int64)] = 0
    out.points["label"] = labels
    return out
