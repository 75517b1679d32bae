import numpy as np

GEOM_NAMES = (
    "log_count", "dx", "dy", "dz", "log1p_volume",
    "lambda1", "lambda2", "lambda3", "linearity", "planarity",
    "reflectance_mean", "reflectance_std",
)


def sorted_eigenvalues(rel):
    """Covariance eigenvalues, descending, clipped at 0 and summing to 1.

    Fewer than 3 points, or no spread at all, gives the uniform (1/3, 1/3, 1/3).
    """
    if len(rel) < 3:
        return np.full(3, 1.0 / 3.0)
    centred = rel - rel.mean(axis=0)
    cov = centred.T @ centred / len(rel)
    lam = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    total = lam.sum()
    if not total > 0:
        return np.full(3, 1.0 / 3.0)
    return lam / total


def geom_features(points, reflectance=None) -> np.ndarray:
    """Twelve size, shape and reflectance features of one object.

    Parameters
    ----------
    points : (N, 3) array, N >= 1
    reflectance : (N,) array or None

    Returns
    -------
    numpy.ndarray
        ``GEOM_NAMES`` in order. ``dz`` doubles as the vertical extent
        z_max - z_min used by the contextual reasoning downstream.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rel = pts - pts.min(axis=0)
    ext = rel.max(axis=0)
    lam = sorted_eigenvalues(rel)
    # lam[0] >= 1/3 always; the degenerate uniform case yields 0 for both
    linearity = (lam[0] - lam[1]) / lam[0]
    planarity = (lam[1] - lam[2]) / lam[0]
    if reflectance is None or len(reflectance) == 0:
        r_mean = r_std = 0.0
    else:
        r = np.asarray(reflectance, dtype=np.float64)
        r_mean, r_std = r.mean(), r.std()
    return np.array([
        np.log(len(pts)),
        ext[0], ext[1], ext[2],
        np.log1p(ext[0] * ext[1] * ext[2]),
        lam[0], lam[1], lam[2],
        linearity, planarity,
        r_mean, r_std,
    ])
