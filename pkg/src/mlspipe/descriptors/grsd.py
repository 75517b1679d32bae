"""Global radius-based surface descriptor.

Each occupied voxel gets a local surface category from the minimum and
maximum curvature radii fitted between its normal and its neighbours'
normals. The descriptor is the normalised histogram of category pairs over
all 26-adjacent occupied voxel pairs.
"""

from dataclasses import dataclass

import numpy as np

from ..cloud import adjacent_pairs, encode_keys, voxel_keys

PLANE, CYLINDER, SPHERE, RIM, EDGE_NOISE, FREE = range(6)
CATEGORY_NAMES = ("plane", "cylinder", "sphere", "rim", "edge_noise", "free")
N_CAT = len(CATEGORY_NAMES)
N_BINS = N_CAT * (N_CAT + 1) // 2  # 21


@dataclass(frozen=True)
class RsdThresholds:
    plane_radius: float = 2.0
    noise_radius: float = 0.05
    sphere_ratio: float = 0.7


def pair_bin(a, b):
    """Bin of the unordered category pair {a, b}."""
    i = np.minimum(a, b)
    j = np.maximum(a, b)
    return i * N_CAT - i * (i - 1) // 2 + (j - i)


def voxel_normals(rel, inverse, m, a, b):
    """Normal per voxel from PCA over the points of the voxel and its neighbours.

    Returns (normals, defined) where ``defined`` is False for neighbourhoods
    of fewer than 3 points.
    """
    cnt = np.bincount(inverse, minlength=m).astype(np.float64)
    s1 = np.stack([np.bincount(inverse, rel[:, k], m) for k in range(3)], axis=1)
    outer = rel[:, :, None] * rel[:, None, :]
    s2 = np.stack(
        [np.bincount(inverse, outer[:, i, j], m) for i in range(3) for j in range(3)],
        axis=1,
    ).reshape(m, 3, 3)
    n_cnt, n_s1, n_s2 = cnt.copy(), s1.copy(), s2.copy()
    for src, dst in ((a, b), (b, a)):
        np.add.at(n_cnt, dst, cnt[src])
        np.add.at(n_s1, dst, s1[src])
        np.add.at(n_s2, dst, s2[src])
    mean = n_s1 / n_cnt[:, None]
    cov = n_s2 / n_cnt[:, None, None] - mean[:, :, None] * mean[:, None, :]
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0], n_cnt >= 3


def voxel_categories(centroids, normals, defined, a, b, thresholds=RsdThresholds()):
    """Surface category of every occupied voxel from its min/max fitted radius."""
    m = len(centroids)
    r_min = np.full(m, np.inf)
    r_max = np.zeros(m)
    n_nb = np.zeros(m, dtype=np.int64)
    np.add.at(n_nb, a, 1)
    np.add.at(n_nb, b, 1)

    ok = defined[a] & defined[b]
    ea, eb = a[ok], b[ok]
    dist = np.linalg.norm(centroids[ea] - centroids[eb], axis=1)
    cos = np.clip(np.abs(np.einsum("ij,ij->i", normals[ea], normals[eb])), 0.0, 1.0)
    half_sin = np.sqrt((1.0 - cos) / 2.0)  # sin(alpha / 2)
    cap = thresholds.plane_radius * 1e3
    with np.errstate(divide="ignore", invalid="ignore"):
        radius = np.where(half_sin > 1e-12, dist / (2.0 * half_sin), cap)
    radius = np.minimum(radius, cap)
    for src in (ea, eb):
        np.minimum.at(r_min, src, radius)
        np.maximum.at(r_max, src, radius)

    cat = np.full(m, RIM, dtype=np.int64)
    has_fit = np.isfinite(r_min)
    ratio = np.divide(r_min, r_max, out=np.zeros(m), where=has_fit & (r_max > 0))
    cat[has_fit & (r_max > thresholds.plane_radius)] = CYLINDER
    cat[has_fit & (ratio > thresholds.sphere_ratio)] = SPHERE
    cat[has_fit & (r_min < thresholds.noise_radius)] = EDGE_NOISE
    cat[has_fit & (r_min > thresholds.plane_radius)] = PLANE
    cat[~has_fit] = EDGE_NOISE
    cat[n_nb == 0] = FREE
    return cat


def grsd(points, voxel=0.25, thresholds=RsdThresholds()) -> np.ndarray:
    """21-bin GRSD histogram summing to 1; uniform for a single point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return np.full(N_BINS, 1.0 / N_BINS)
    rel = pts - pts.min(axis=0)
    keys = voxel_keys(rel, voxel)
    codes, _ = encode_keys(keys)
    _, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    keys = keys[first]
    m = len(keys)
    cnt = np.bincount(inverse, minlength=m)
    centroids = np.stack([np.bincount(inverse, rel[:, k], m) for k in range(3)], axis=1)
    centroids /= cnt[:, None]

    a, b = adjacent_pairs(keys)
    normals, defined = voxel_normals(rel, inverse, m, a, b)
    cat = voxel_categories(centroids, normals, defined, a, b, thresholds)

    if len(a):
        bins = pair_bin(cat[a], cat[b])
    else:
        bins = pair_bin(cat, cat)
    hist = np.bincount(bins, minlength=N_BINS).astype(np.float64)
    return hist / hist.sum()
