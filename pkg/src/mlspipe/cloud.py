"""Point cloud container, uniform voxel grid and ground elevation raster."""

from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, InvalidParameter, PreconditionViolation

# Packed record layout of one point, identical to the on-disk PLY vertex.
POINT_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("x_origin", "<f4"),
        ("y_origin", "<f4"),
        ("z_origin", "<f4"),
        ("GPS_time", "<f8"),
        ("reflectance", "u1"),
        ("label", "<u4"),
        ("class", "<u4"),
    ]
)

EMPTY = np.nan


@dataclass
class PointCloud:
    """Ordered points stored as one structured array (``POINT_DTYPE``).

    ``offset`` is the planar coordinate offset that was subtracted from the
    original georeferenced positions; it is metadata only.
    """

    points: np.ndarray
    offset: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.points.dtype != POINT_DTYPE:
            pts = np.zeros(len(self.points), dtype=POINT_DTYPE)
            for name in POINT_DTYPE.names:
                if name in (self.points.dtype.names or ()):
                    pts[name] = self.points[name]
            self.points = pts

    @classmethod
    def empty(cls, n=0):
        return cls(np.zeros(n, dtype=POINT_DTYPE))

    @classmethod
    def from_arrays(cls, xyz, origins=None, gps_time=None, reflectance=None,
                    label=None, class_id=None, offset=(0.0, 0.0)):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        pts = np.zeros(len(xyz), dtype=POINT_DTYPE)
        pts["x"], pts["y"], pts["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        if origins is not None:
            origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
            pts["x_origin"] = origins[:, 0]
            pts["y_origin"] = origins[:, 1]
            pts["z_origin"] = origins[:, 2]
        if gps_time is not None:
            pts["GPS_time"] = gps_time
        if reflectance is not None:
            pts["reflectance"] = reflectance
        if label is not None:
            pts["label"] = label
        if class_id is not None:
            pts["class"] = class_id
        return cls(pts, offset=tuple(offset))

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        """(N, 3) float64 positions."""
        p = self.points
        return np.column_stack([p["x"], p["y"], p["z"]]).astype(np.float64)

    @property
    def origins(self) -> np.ndarray:
        p = self.points
        return np.column_stack(
            [p["x_origin"], p["y_origin"], p["z_origin"]]
        ).astype(np.float64)

    @property
    def reflectance(self) -> np.ndarray:
        return self.points["reflectance"]

    @property
    def label(self) -> np.ndarray:
        return self.points["label"]

    @property
    def class_id(self) -> np.ndarray:
        return self.points["class"]

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices)].copy(), self.offset)

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy(), self.offset)


def voxel_keys(xyz, cell_size):
    """Integer cell index ``floor(coord / cell_size)`` per axis."""
    return np.floor(np.asarray(xyz, dtype=np.float64) / cell_size).astype(np.int64)


def encode_keys(keys):
    """Map (M, 3) integer keys to unique int64 codes (order preserving)."""
    keys = np.asarray(keys, dtype=np.int64)
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64), (np.zeros(3, np.int64), np.ones(3, np.int64))
    lo = keys.min(axis=0) - 1
    span = keys.max(axis=0) - lo + 2
    shifted = keys - lo
    codes = (shifted[:, 0] * span[1] + shifted[:, 1]) * span[2] + shifted[:, 2]
    return codes, (lo, span)


# 13 offsets, one from each +/- pair of the 26-neighbourhood
FORWARD_26 = [d for d in product((-1, 0, 1), repeat=3) if d > (0, 0, 0)]


def adjacent_pairs(keys):
    """Index pairs (a, b) of 26-adjacent cells, each unordered pair once."""
    m = len(keys)
    if m == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    codes, (lo, span) = encode_keys(keys)
    order = np.argsort(codes)
    sc = codes[order]
    a_list, b_list = [], []
    for d in FORWARD_26:
        ncode = codes + (d[0] * span[1] + d[1]) * span[2] + d[2]
        pos = np.minimum(np.searchsorted(sc, ncode), m - 1)
        hit = sc[pos] == ncode
        a_list.append(np.flatnonzero(hit))
        b_list.append(order[pos[hit]])
    return np.concatenate(a_list), np.concatenate(b_list)


@dataclass(frozen=True)
class VoxelGrid:
    """Points of a subset bucketed into cubic cells of side ``cell_size``.

    ``cell_keys[c]`` is the integer index of cell ``c``; the point indices of
    that cell are ``indices[offsets[c]:offsets[c + 1]]`` (ascending).
    ``subset_cell[j]`` is the cell holding point ``subset[j]``.
    """

    cell_size: float
    cell_keys: np.ndarray
    indices: np.ndarray
    offsets: np.ndarray
    subset: np.ndarray
    subset_cell: np.ndarray
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.cell_keys)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def cell_points(self, c) -> np.ndarray:
        return self.indices[self.offsets[c]:self.offsets[c + 1]]

    def __getitem__(self, key) -> np.ndarray:
        if self._lookup is None:
            object.__setattr__(
                self, "_lookup",
                {tuple(int(v) for v in k): c for c, k in enumerate(self.cell_keys)},
            )
        return self.cell_points(self._lookup[tuple(int(v) for v in key)])

    def __contains__(self, key):
        try:
            self[key]
        except KeyError:
            return False
        return True

    def items(self):
        for c, k in enumerate(self.cell_keys):
            yield tuple(int(v) for v in k), self.cell_points(c)


def build_voxel_grid(cloud, subset=None, cell_size=0.2) -> VoxelGrid:
    if not cell_size > 0:
        raise InvalidParameter(f"cell_size must be positive, got {cell_size}")
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(xyz)
    if subset is None:
        subset = np.arange(n)
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) and (subset.min() < 0 or subset.max() >= n):
        raise InvalidParameter("subset index out of range")
    if len(np.unique(subset)) != len(subset):
        raise InvalidParameter("subset contains duplicate indices")

    keys = voxel_keys(xyz[subset], cell_size)
    codes, _ = encode_keys(keys)
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    order = np.lexsort((subset, inverse))
    counts = np.bincount(inverse, minlength=len(uniq))
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return VoxelGrid(
        cell_size=float(cell_size),
        cell_keys=keys[first] if len(keys) else np.zeros((0, 3), np.int64),
        indices=subset[order],
        offsets=offsets,
        subset=subset,
        subset_cell=inverse.astype(np.int64),
    )


@dataclass(frozen=True)
class ElevationImage:
    """Ground elevation raster; rows follow y, columns follow x.

    Cell ``(r, c)`` covers ``[x0 + c*cs, x0 + (c+1)*cs) x [y0 + r*cs, ...)``.
    EMPTY cells hold NaN.
    """

    cell_size: float
    origin: Tuple[float, float]
    elevation: np.ndarray
    ground_mask: np.ndarray

    @property
    def height(self):
        return self.elevation.shape[0]

    @property
    def width(self):
        return self.elevation.shape[1]

    @property
    def empty_mask(self):
        return np.isnan(self.elevation)

    def cell_of(self, x, y):
        """Clamped (row, col) of the cells containing (x, y)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.cell_at_offset(x - self.origin[0], y - self.origin[1])

    def cell_at_offset(self, dx, dy):
        """Clamped (row, col) for planar offsets from the raster origin."""
        col = np.floor(np.asarray(dx, dtype=np.float64) / self.cell_size).astype(np.int64)
        row = np.floor(np.asarray(dy, dtype=np.float64) / self.cell_size).astype(np.int64)
        return np.clip(row, 0, self.height - 1), np.clip(col, 0, self.width - 1)


def grid_cells(xy, cell_size, origin=None):
    """Raster (row, col) of planar points and the raster shape."""
    xy = np.asarray(xy, dtype=np.float64)
    if origin is None:
        origin = (float(xy[:, 0].min()), float(xy[:, 1].min()))
    col = np.floor((xy[:, 0] - origin[0]) / cell_size).astype(np.int64)
    row = np.floor((xy[:, 1] - origin[1]) / cell_size).astype(np.int64)
    shape = (int(row.max()) + 1, int(col.max()) + 1)
    return row, col, shape, origin


def rasterize_ground(cloud, ground_indices, cell_size=0.1, aggregate="min",
                     origin=None, shape=None) -> ElevationImage:
    """Per-cell elevation of the ground points (minimum z by default)."""
    if not cell_size > 0:
        raise InvalidParameter(f"cell_size must be positive, got {cell_size}")
    ground_indices = np.asarray(ground_indices, dtype=np.int64)
    if len(ground_indices) == 0:
        raise EmptyInput("no ground points to rasterize")
    xyz = cloud.xyz[ground_indices] if isinstance(cloud, PointCloud) else \
        np.asarray(cloud, dtype=np.float64)[ground_indices]
    row, col, auto_shape, origin = grid_cells(xyz[:, :2], cell_size, origin)
    if shape is None:
        shape = auto_shape
    flat = row * shape[1] + col
    size = shape[0] * shape[1]
    if aggregate == "min":
        elev = np.full(size, np.inf)
        np.minimum.at(elev, flat, xyz[:, 2])
        mask = np.isfinite(elev)
    elif aggregate == "mean":
        sums = np.bincount(flat, weights=xyz[:, 2], minlength=size)
        cnt = np.bincount(flat, minlength=size)
        mask = cnt > 0
        elev = np.divide(sums, cnt, out=np.zeros(size), where=mask)
    else:
        raise InvalidParameter(f"unknown aggregate {aggregate!r}")
    elev = np.where(mask, elev, EMPTY).reshape(shape)
    return ElevationImage(float(cell_size), tuple(origin), elev, mask.reshape(shape))


def fill_holes(img: ElevationImage) -> ElevationImage:
    """Give every EMPTY cell the value of its nearest non-EMPTY cell.

    Distances are between cell centres; ties go to the lowest (row, col).
    """
    empty = img.empty_mask
    if empty.all():
        raise EmptyInput("elevation raster has no non-empty cell")
    if not empty.any():
        return img
    full_rc = np.argwhere(~empty)  # row-major, so lowest flat index first
    hole_rc = np.argwhere(empty)
    tree = cKDTree(full_rc)
    k = min(16, len(full_rc))
    dist, idx = tree.query(hole_rc, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    # squared distances are integers on the lattice; compare them exactly
    d2 = np.rint(dist ** 2).astype(np.int64)
    best = d2[:, 0:1]
    tied = d2 == best
    cand = np.where(tied, idx, np.iinfo(np.int64).max)
    choice = cand.min(axis=1)
    # the k nearest may not hold every tied cell; resolve those by ball query
    overflow = tied[:, -1] & (k < len(full_rc))
    for h in np.flatnonzero(overflow):
        r = np.sqrt(best[h, 0]) + 1e-6
        ball = np.asarray(tree.query_ball_point(hole_rc[h], r), dtype=np.int64)
        bd2 = ((full_rc[ball] - hole_rc[h]) ** 2).sum(axis=1)
        choice[h] = ball[bd2 == best[h, 0]].min()
    elev = img.elevation.copy()
    src = full_rc[choice]
    elev[hole_rc[:, 0], hole_rc[:, 1]] = img.elevation[src[:, 0], src[:, 1]]
    return ElevationImage(img.cell_size, img.origin, elev, img.ground_mask)


def smooth(img: ElevationImage, kernel_radius=2) -> ElevationImage:
    """Box mean over the in-bounds (2r+1)^2 window of each cell."""
    if kernel_radius < 0:
        raise InvalidParameter("kernel_radius must be >= 0")
    if img.empty_mask.any():
        raise PreconditionViolation("smooth requires a hole-free raster")
    if kernel_radius == 0:
        return ElevationImage(img.cell_size, img.origin, img.elevation.copy(), img.ground_mask)
    r = int(kernel_radius)
    e = img.elevation
    h, w = e.shape
    total = np.zeros_like(e)
    count = np.zeros_like(e)
    ones = np.ones_like(e)
    for dr in range(-r, r + 1):
        rs = slice(max(0, -dr), min(h, h - dr))
        rd = slice(max(0, dr), min(h, h + dr))
        for dc in range(-r, r + 1):
            cs = slice(max(0, -dc), min(w, w - dc))
            cd = slice(max(0, dc), min(w, w + dc))
            total[rs, cs] += e[rd, cd]
            count[rs, cs] += ones[rd, cd]
    return ElevationImage(img.cell_size, img.origin, total / count, img.ground_mask)


def elevation_at(img: ElevationImage, x, y):
    """Elevation of the cell containing (x, y); clamped to the border."""
    row, col = img.cell_of(x, y)
    out = img.elevation[row, col]
    return float(out) if np.ndim(out) == 0 else out
