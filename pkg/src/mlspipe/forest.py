"""Random Forest of Gini CART trees with bootstrap sampling and OOB scoring.

Training is reproducible byte for byte from the seed: each tree draws from
its own spawned generator, and every tie (equal-score splits, equal votes)
is broken towards the lowest feature index, threshold or class id.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (IncompatibleModel, InvalidParameter, InvalidTrainingSet,
                     ModelFormatError)

MODEL_MAGIC = b"MLSRF"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    mtry: Optional[int] = None  # floor(sqrt(n_features)) when None
    min_leaf: int = 1
    max_depth: Optional[int] = None
    seed: int = 0
    split_fraction: float = 0.8
    class_weight: Optional[str] = None  # None or "balanced"
    threads: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidParameter("n_trees must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidParameter("split_fraction must lie in (0, 1)")
        if self.min_leaf < 1:
            raise InvalidParameter("min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidParameter("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidParameter("max_depth must be >= 0")
        if self.class_weight not in (None, "balanced"):
            raise InvalidParameter(f"unknown class_weight {self.class_weight!r}")


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 marks a leaf
    threshold: np.ndarray  # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # (n_nodes, n_classes) training sample counts

    def apply(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            f = self.feature[nd]
            go_left = X[r, f] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def vote(self, X):
        """Class index voted by this tree for every row of X."""
        return np.argmax(self.value[self.apply(X)], axis=1)


@dataclass
class ForestModel:
    trees: List[Tree]
    layout: str
    classes: np.ndarray
    n_features: int
    meta: dict = field(default_factory=dict)

    @property
    def oob_score(self):
        return self.meta.get("oob_score", float("nan"))

    def votes(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise IncompatibleModel(
                f"vector has {X.shape[1]} features, model expects {self.n_features}")
        counts = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(X))
        for t in self.trees:
            counts[rows, t.vote(X)] += 1
        return counts


def _check_layout(model, layout):
    if layout is not None and layout != model.layout:
        raise IncompatibleModel(f"descriptor layout {layout!r} does not match model {model.layout!r}")


def predict(model: ForestModel, vector, layout=None):
    """(class id, per-class vote fractions) for one vector."""
    _check_layout(model, layout)
    counts = model.votes(np.asarray(vector, dtype=np.float64).reshape(1, -1))[0]
    frac = counts / counts.sum()
    return int(model.classes[int(np.argmax(counts))]), frac


def predict_many(model: ForestModel, X, layout=None):
    _check_layout(model, layout)
    counts = model.votes(X)
    return model.classes[np.argmax(counts, axis=1)], counts / counts.sum(axis=1, keepdims=True)


def split_train_test(n_objects, fraction=0.8, seed=0):
    """Seeded object-level split; |train| = round-half-up(fraction * N)."""
    n = int(n_objects) if np.ndim(n_objects) == 0 else len(n_objects)
    if n < 2:
        raise InvalidParameter("need at least 2 objects to split")
    if not 0.0 < fraction < 1.0:
        raise InvalidParameter("fraction must lie in (0, 1)")
    k = int(np.floor(fraction * n + 0.5))
    if k < 1 or k > n - 1:
        raise InvalidParameter(f"split of {n} objects at {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def _best_split(xs, ys, ws, n_classes, min_leaf):
    """Best (score, threshold) on one feature, or None when nothing splits.

    score = sum_c L_c^2 / |L| + sum_c R_c^2 / |R| (weighted), maximised; this
    is minimising the weighted Gini impurity of the children.
    """
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    n = len(xs)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys[order]] = ws[order]
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1] if n > 1 else onehot[-1]
    right = total - left
    pos = np.arange(1, n)  # size of the left side
    ok = (xs[:-1] < xs[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
    if not ok.any():
        return None
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left ** 2).sum(axis=1) / wl + (right ** 2).sum(axis=1) / wr
    score = np.where(ok, score, -np.inf)
    i = int(np.argmax(score))  # first maximum, i.e. lowest threshold
    return float(score[i]), float(xs[i])


def _grow_tree(X, y, w, n_classes, boot, mtry, min_leaf, max_depth, rng):
    feature, threshold, left, right, value = [], [], [], [], []
    n_features = X.shape[1]

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    root = new_node(boot)
    stack = [(root, boot, 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = value[node]
        if np.count_nonzero(counts) <= 1 or len(idx) < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        perm = rng.permutation(n_features)
        best = None  # (score, feature, threshold)
        tried = 0
        evaluated = []
        for f in perm:
            if tried >= mtry and evaluated:
                break
            tried += 1
            res = _best_split(X[idx, f], y[idx], w[idx], n_classes, min_leaf)
            if res is not None:
                evaluated.append((int(f), res))
        for f, (score, thr) in sorted(evaluated):
            if best is None or score > best[0]:
                best = (score, f, thr)
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(value, dtype=np.float64).reshape(len(feature), n_classes),
    )


def train(X, y, config=TrainConfig(), layout="") -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidTrainingSet("X must be (n_samples, n_features) matching y")
    if not np.isfinite(X).all():
        raise InvalidTrainingSet("training vectors contain non-finite values")
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise InvalidTrainingSet("training set needs at least two classes")
    n, n_features = X.shape
    n_classes = len(classes)
    mtry = config.mtry or max(1, int(np.floor(np.sqrt(n_features))))
    mtry = min(mtry, n_features)

    class_w = np.ones(n_classes)
    if config.class_weight == "balanced":
        class_w = n / (n_classes * np.bincount(y_idx, minlength=n_classes))
    w = class_w[y_idx]

    children = np.random.SeedSequence(int(config.seed) & ((1 << 64) - 1)).spawn(config.n_trees)

    def build(child):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        tree = _grow_tree(X, y_idx, w, n_classes, boot, mtry,
                          config.min_leaf, config.max_depth, rng)
        if config.class_weight is not None:
            tree.value *= class_w[None, :]
        return tree, boot

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            built = list(pool.map(build, children))
    else:
        built = [build(c) for c in children]

    oob_votes = np.zeros((n, n_classes), dtype=np.int64)
    for tree, boot in built:
        out = np.ones(n, dtype=bool)
        out[boot] = False
        rows = np.flatnonzero(out)
        if len(rows):
            oob_votes[rows, tree.vote(X[rows])] += 1
    seen = oob_votes.sum(axis=1) > 0
    oob = float(np.mean(np.argmax(oob_votes[seen], axis=1) == y_idx[seen])) if seen.any() \
        else float("nan")

    meta = {
        "seed": int(config.seed), "n_trees": config.n_trees, "mtry": mtry,
        "min_leaf": config.min_leaf,
        "max_depth": -1 if config.max_depth is None else config.max_depth,
        "class_weight": config.class_weight or "none",
        "oob_score": oob, "n_train": n,
    }
    return ForestModel([t for t, _ in built], layout, classes.astype(np.int64), n_features, meta)


def _meta_text(meta):
    return ";".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in sorted(meta.items()))


def _parse_meta(text):
    meta = {}
    for item in filter(None, text.split(";")):
        k, _, v = item.partition("=")
        for conv in (int, float):
            try:
                meta[k] = conv(v)
                break
            except ValueError:
                continue
        else:
            meta[k] = v
    return meta


def model_bytes(model: ForestModel) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<H", MODEL_VERSION)]

    def blob(b):
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)

    blob(model.layout.encode("utf-8"))
    blob(_meta_text(model.meta).encode("utf-8"))
    parts.append(struct.pack("<II", len(model.classes), model.n_features))
    parts.append(np.asarray(model.classes, dtype="<i8").tobytes())
    parts.append(struct.pack("<I", len(model.trees)))
    for t in model.trees:
        parts.append(struct.pack("<I", len(t.feature)))
        parts.append(t.feature.astype("<i4").tobytes())
        parts.append(t.threshold.astype("<f8").tobytes())
        parts.append(t.left.astype("<i4").tobytes())
        parts.append(t.right.astype("<i4").tobytes())
        parts.append(t.value.astype("<f8").tobytes())
    return b"".join(parts)


def save_model(model: ForestModel, dest):
    data = model_bytes(model)
    if hasattr(dest, "write"):
        dest.write(data)
    else:
        with open(dest, "wb") as f:
            f.write(data)
    return len(data)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"model stream truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def load_model(source) -> ForestModel:
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        with open(source, "rb") as f:
            data = f.read()
    r = _Reader(data)
    if r.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise ModelFormatError("not a forest model file")
    (version,) = r.unpack("<H")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"model version {version}, expected {MODEL_VERSION}")
    try:
        layout = r.take(r.unpack("<I")[0]).decode("utf-8")
        meta = _parse_meta(r.take(r.unpack("<I")[0]).decode("utf-8"))
    except UnicodeDecodeError:
        raise ModelFormatError("corrupt model header") from None
    n_classes, n_features = r.unpack("<II")
    classes = r.array("<i8", n_classes)
    (n_trees,) = r.unpack("<I")
    trees = []
    for _ in range(n_trees):
        (m,) = r.unpack("<I")
        t = Tree(
            r.array("<i4", m), r.array("<f8", m), r.array("<i4", m), r.array("<i4", m),
            r.array("<f8", m * n_classes).reshape(m, n_classes),
        )
        inner = t.feature >= 0
        if m == 0 or (t.feature >= n_features).any() or \
                (inner & ((t.left < 0) | (t.left >= m) | (t.right < 0) | (t.right >= m))).any():
            raise ModelFormatError("corrupt tree record")
        trees.append(t)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes in model stream")
    return ForestModel(trees, layout, classes, n_features, meta)
