"""Ground extraction by region growing on an elevation map.

Seeds come from the cylinder directly below each point's sensor origin,
which stays valid on sloping roads where a global z histogram does not.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import ElevationImage, fill_holes, grid_cells, rasterize_ground, smooth
from .errors import InvalidParameter, NoSeedError


@dataclass(frozen=True)
class GroundParams:
    sensor_height: float = 2.71
    seed_radius: float = 1.0
    seed_z_tol: float = 0.3
    cell_size: float = 0.1
    grow_dz_max: float = 0.15
    smooth_radius: int = 2
    support_radius: int = 2

    def __post_init__(self):
        for name in ("sensor_height", "seed_radius", "seed_z_tol", "cell_size", "grow_dz_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be strictly positive")
        if self.smooth_radius < 0 or self.support_radius < 0:
            raise InvalidParameter("smooth_radius and support_radius must be >= 0")


@dataclass(frozen=True)
class GroundResult:
    ground_indices: np.ndarray
    elevation: ElevationImage
    accepted_cells: np.ndarray  # bool raster of the grown region

    def mask(self, n):
        m = np.zeros(n, dtype=bool)
        m[self.ground_indices] = True
        return m


def seed_points(cloud, params=GroundParams()) -> np.ndarray:
    xyz = cloud.xyz
    org = cloud.origins
    dx = xyz[:, 0] - org[:, 0]
    dy = xyz[:, 1] - org[:, 1]
    lateral = np.sqrt(dx * dx + dy * dy)
    vertical = np.abs(org[:, 2] - xyz[:, 2] - params.sensor_height)
    idx = np.flatnonzero((lateral <= params.seed_radius) & (vertical <= params.seed_z_tol))
    if len(idx) == 0:
        raise NoSeedError("no point lies in the seed cylinder below the sensor")
    return idx


# forward half of the 8-neighbourhood; the other half is covered by symmetry
_OFFSETS_8 = ((0, 1), (1, -1), (1, 0), (1, 1))


def _grow(elev, seed_cells, dz_max):
    """Cells reachable from seeds through 8-adjacent steps with |dz| <= dz_max."""
    h, w = elev.shape
    valid = ~np.isnan(elev)
    flat = np.arange(h * w).reshape(h, w)
    rows, cols = [], []
    for dr, dc in _OFFSETS_8:
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), min(w, w - dc)
        a = elev[r0:r1, c0:c1]
        b = elev[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        ok = valid[r0:r1, c0:c1] & valid[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        ok &= np.abs(a - b) <= dz_max
        rows.append(flat[r0:r1, c0:c1][ok])
        cols.append(flat[r0 + dr:r1 + dr, c0 + dc:c1 + dc][ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows), np.int8), (rows, cols)), shape=(h * w, h * w))
    _, comp = connected_components(graph, directed=False)
    seed_cells = seed_cells[valid.ravel()[seed_cells]]
    accepted = np.isin(comp, np.unique(comp[seed_cells])) & valid.ravel()
    return accepted.reshape(h, w)


def grow_ground(cloud, seeds, params=GroundParams()) -> GroundResult:
    """Grow the ground region over the min-z raster of the whole cloud.

    A cell joins when its elevation differs from an accepted 8-neighbour by
    at most ``grow_dz_max``. Inside accepted cells, a point is ground when it
    lies within ``grow_dz_max`` of the lowest accepted elevation among the
    cells at most ``support_radius`` away (0 = its own cell). A wall sliver
    that joined through a small step then cannot lift the band above the
    surrounding road.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise NoSeedError("region growing needs at least one seed")
    xyz = cloud.xyz
    row, col, shape, origin = grid_cells(xyz[:, :2], params.cell_size)
    flat = row * shape[1] + col
    elev = np.full(shape[0] * shape[1], np.inf)
    np.minimum.at(elev, flat, xyz[:, 2])
    elev[~np.isfinite(elev)] = np.nan
    elev = elev.reshape(shape)

    accepted = _grow(elev, np.unique(flat[seeds]), params.grow_dz_max)
    in_cell = accepted.ravel()[flat]
    floor = np.where(accepted, elev, np.inf)
    if params.support_radius > 0:
        floor = minimum_filter(floor, size=2 * params.support_radius + 1,
                               mode="constant", cval=np.inf)
    near = xyz[:, 2] - floor.ravel()[flat] <= params.grow_dz_max
    ground = np.flatnonzero(in_cell & near)

    img = rasterize_ground(xyz, ground, params.cell_size, origin=origin, shape=shape)
    img = smooth(fill_holes(img), params.smooth_radius)
    return GroundResult(ground, img, accepted)


def extract_ground(cloud, params=GroundParams()) -> GroundResult:
    return grow_ground(cloud, seed_points(cloud, params), params)
