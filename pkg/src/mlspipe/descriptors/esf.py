"""Ensemble of shape functions: 10 x 64-bin histograms from random triplets.

Layout, each 64 bins::

    D2 in | D2 out | D2 mixed | A3 in | A3 out | A3 mixed |
    D3 in | D3 out | D3 mixed | D2 occupancy ratio

in/out/mixed says whether the line between two sampled points runs through
occupied voxels only, empty voxels only, or both. Each of the four families
(D2, A3, D3, ratio) carries a quarter of the total mass, so the block sums
to 1.
"""

import numpy as np

N_SUB = 64
N_HIST = 10
N_BINS = N_SUB * N_HIST  # 640
GRID = 32
_CHUNK = 4096

D2_IN, A3_IN, D3_IN, D2_RATIO = 0, 3, 6, 9


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _bin(v):
    return np.minimum((v * N_SUB).astype(np.int64), N_SUB - 1)


class _Occupancy:
    def __init__(self, rel, voxel):
        self.voxel = voxel
        idx = (rel / voxel).astype(np.int64)
        self.shape = idx.max(axis=0) + 1
        self.grid = np.zeros(tuple(self.shape), dtype=bool)
        self.grid[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        # enough samples to hit every voxel along the longest possible line
        self.steps = int(np.ceil(np.sqrt(3.0) * self.shape.max())) + 1

    def line_fraction(self, p, q):
        """Fraction of interior samples of segments p->q that are occupied."""
        t = ((np.arange(self.steps) + 0.5) / self.steps).astype(np.float32)
        a = (p / self.voxel).astype(np.float32)
        d = (q / self.voxel).astype(np.float32) - a
        flat = np.zeros((len(p), self.steps), dtype=np.int64)
        for axis in range(3):
            c = (a[:, axis, None] + d[:, axis, None] * t).astype(np.int64)
            np.clip(c, 0, self.shape[axis] - 1, out=c)
            flat *= self.shape[axis]
            flat += c
        return self.grid.ravel()[flat].mean(axis=1)


def _kind(frac):
    """0 = in, 1 = out, 2 = mixed."""
    return np.where(frac >= 1.0, 0, np.where(frac <= 0.0, 1, 2))


def esf(points, samples=20000, seed=0) -> np.ndarray:
    """640-bin ESF histogram; deterministic for a given seed.

    Distances and areas are normalised by the bounding-box diagonal. Fewer
    than 3 points give the uniform histogram.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        return np.full(N_BINS, 1.0 / N_BINS)
    rng = _rng(seed)
    rel = pts - pts.min(axis=0)
    ext = rel.max(axis=0)
    diag = float(np.linalg.norm(ext))
    if diag == 0.0:
        diag = 1.0
    voxel = float(ext.max()) / GRID if ext.max() > 0 else 1.0
    occ = _Occupancy(rel, voxel)

    hist = np.zeros((N_HIST, N_SUB))
    for start in range(0, samples, _CHUNK):
        k = min(_CHUNK, samples - start)
        tri = rng.integers(0, n, size=(k, 3))
        p = [rel[tri[:, j]] for j in range(3)]
        kinds = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            frac = occ.line_fraction(p[a], p[b])
            d = np.linalg.norm(p[b] - p[a], axis=1) / diag
            kd = _kind(frac)
            kinds.append(kd)
            np.add.at(hist, (D2_IN + kd, _bin(d)), 1.0)
            np.add.at(hist[D2_RATIO], _bin(frac), 1.0)

        u = p[1] - p[0]
        v = p[2] - p[0]
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        denom = nu * nv
        cos = np.divide(np.einsum("ij,ij->i", u, v), denom,
                        out=np.ones(k), where=denom > 0)
        angle = np.arccos(np.clip(cos, -1.0, 1.0)) / np.pi
        # angle at p0 is classified by the opposite side p1-p2
        np.add.at(hist, (A3_IN + kinds[1], _bin(angle)), 1.0)

        area = 0.5 * np.linalg.norm(np.cross(u, v), axis=1)
        d3 = np.sqrt(2.0 * area) / diag
        all_in = (kinds[0] == 0) & (kinds[1] == 0) & (kinds[2] == 0)
        all_out = (kinds[0] == 1) & (kinds[1] == 1) & (kinds[2] == 1)
        tri_kind = np.where(all_in, 0, np.where(all_out, 1, 2))
        np.add.at(hist, (D3_IN + tri_kind, _bin(d3)), 1.0)

    family_total = np.array([3, 3, 3, 1, 1, 1, 1, 1, 1, 3], dtype=np.float64) * samples
    hist = hist / family_total[:, None] / 4.0
    return hist.ravel()


def sub_histogram(values, which):
    """64-bin slice ``which`` (0..9) of an ESF vector."""
    return np.asarray(values)[which * N_SUB:(which + 1) * N_SUB]
