"""Object detection matching and per-class classification metrics."""

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInput, InvalidParameter, MissingCoarseClass

INTERSECTION = "intersection"
LITERAL = "literal"
VARIANTS = (INTERSECTION, LITERAL)


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


def f1_score(p, r):
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class MatchReport:
    m: float
    variant: str
    pairs: List[Tuple[int, int]]
    detected: int
    ground_truth: int
    matched_detected: int
    matched_gt: int
    precision: float
    recall: float
    f1: float

    def csv_rows(self):
        header = ["variant", "m", "detected", "matched_detected", "matched_gt",
                  "ground_truth", "precision", "recall", "f1"]
        row = [self.variant, repr(float(self.m)), self.detected, self.matched_detected,
               self.matched_gt, self.ground_truth, repr(self.precision),
               repr(self.recall), repr(self.f1)]
        return [header, row]

    def text(self):
        return (f"detection  variant={self.variant}  m={self.m}\n"
                f"  detected={self.detected}  ground_truth={self.ground_truth}  "
                f"matched_detected={self.matched_detected}  matched_gt={self.matched_gt}\n"
                f"  precision={self.precision:.4f}  recall={self.recall:.4f}  f1={self.f1:.4f}")


def contingency(gt_labels, sr_labels):
    """Object sizes and non-empty intersections of two label fields.

    Label 0 means "no object". Returns (gt_ids, gt_sizes, sr_ids, sr_sizes,
    pairs) with ``pairs`` rows (gt_id, sr_id, |intersection|).
    """
    gt = np.asarray(gt_labels, dtype=np.int64)
    sr = np.asarray(sr_labels, dtype=np.int64)
    if gt.shape != sr.shape:
        raise InvalidInput(
            f"label fields cover different point universes ({len(gt)} vs {len(sr)})")
    gt_ids, gt_sizes = np.unique(gt[gt != 0], return_counts=True)
    sr_ids, sr_sizes = np.unique(sr[sr != 0], return_counts=True)
    both = (gt != 0) & (sr != 0)
    if both.any():
        pairs, inter = np.unique(np.column_stack([gt[both], sr[both]]), axis=0,
                                 return_counts=True)
        table = np.column_stack([pairs, inter])
    else:
        table = np.zeros((0, 3), dtype=np.int64)
    return gt_ids, gt_sizes, sr_ids, sr_sizes, table


def match_objects(gt_labels, sr_labels, m=0.5, variant=INTERSECTION) -> MatchReport:
    """Match ground-truth objects to segmented objects at threshold ``m``.

    INTERSECTION: |GT & SR| / |GT| > m and |GT & SR| / |SR| > m.
    LITERAL:      |GT| / |GT | SR| > m and |SR| / |GT | SR| > m, tested only
                  on pairs that intersect.

    precision = matched segmented objects / segmented objects,
    recall    = matched ground-truth objects / ground-truth objects.
    """
    if not 0.0 < m <= 1.0:
        raise InvalidParameter(f"m must lie in (0, 1], got {m}")
    if variant not in VARIANTS:
        raise InvalidParameter(f"unknown matching variant {variant!r}")
    gt_ids, gt_sizes, sr_ids, sr_sizes, table = contingency(gt_labels, sr_labels)
    gsize = dict(zip(gt_ids.tolist(), gt_sizes.tolist()))
    ssize = dict(zip(sr_ids.tolist(), sr_sizes.tolist()))
    pairs = []
    for g, s, inter in table.tolist():
        a, b = gsize[g], ssize[s]
        if variant == INTERSECTION:
            ok = inter / a > m and inter / b > m
        else:
            union = a + b - inter
            ok = a / union > m and b / union > m
        if ok:
            pairs.append((g, s))
    matched_sr = len({s for _, s in pairs})
    matched_gt = len({g for g, _ in pairs})
    p = _ratio(matched_sr, len(sr_ids))
    r = _ratio(matched_gt, len(gt_ids))
    return MatchReport(m, variant, pairs, len(sr_ids), len(gt_ids),
                       matched_sr, matched_gt, p, r, f1_score(p, r))


@dataclass
class ClassReport:
    classes: np.ndarray
    confusion: np.ndarray  # rows: true class, columns: predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    mcc: np.ndarray
    support: np.ndarray
    macro: dict
    micro: dict
    degenerate: List[str] = field(default_factory=list)
    names: Optional[dict] = None

    def csv_rows(self):
        rows = [["class", "name", "support", "precision", "recall", "f1", "mcc"]]
        for i, c in enumerate(self.classes):
            name = (self.names or {}).get(int(c), "")
            rows.append([int(c), name, int(self.support[i]), repr(float(self.precision[i])),
                         repr(float(self.recall[i])), repr(float(self.f1[i])),
                         repr(float(self.mcc[i]))])
        for label, avg in (("macro", self.macro), ("micro", self.micro)):
            rows.append([label, "", int(self.support.sum()), repr(avg["precision"]),
                         repr(avg["recall"]), repr(avg["f1"]), repr(avg["mcc"])])
        return rows

    def text(self):
        w = max([len(str(c)) for c in self.classes] + [5])
        lines = [f"{'class':>{w}}  {'support':>7}  {'P':>7}  {'R':>7}  {'F1':>7}  {'MCC':>7}"]
        for i, c in enumerate(self.classes):
            lines.append(f"{int(c):>{w}}  {int(self.support[i]):>7}  {self.precision[i]:7.4f}  "
                         f"{self.recall[i]:7.4f}  {self.f1[i]:7.4f}  {self.mcc[i]:7.4f}")
        for label, avg in (("macro", self.macro), ("micro", self.micro)):
            lines.append(f"{label:>{w}}  {int(self.support.sum()):>7}  {avg['precision']:7.4f}  "
                         f"{avg['recall']:7.4f}  {avg['f1']:7.4f}  {avg['mcc']:7.4f}")
        if self.degenerate:
            lines.append("degenerate: " + "; ".join(self.degenerate))
        return "\n".join(lines)


def _mcc(tp, tn, fp, fn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(float(den))


def classification_metrics(confusion, classes=None) -> ClassReport:
    """One-vs-all P, R, F1 and MCC per class, macro and micro averages.

    Undefined ratios are 0 and listed in ``degenerate``. Macro averages run
    over the classes that occur in the ground truth (non-empty rows).
    """
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise InvalidInput("confusion matrix must be square")
    if (cm < 0).any():
        raise InvalidInput("confusion matrix has negative entries")
    k = cm.shape[0]
    classes = np.arange(k) if classes is None else np.asarray(classes)
    total = int(cm.sum())
    tp = np.diag(cm).astype(np.int64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    degenerate = []
    P, R, F, M = (np.zeros(k) for _ in range(4))
    for i in range(k):
        t, f_p, f_n, t_n = int(tp[i]), int(fp[i]), int(fn[i]), int(tn[i])
        c = classes[i]
        if t + f_p == 0:
            degenerate.append(f"class {c}: precision undefined")
        if t + f_n == 0:
            degenerate.append(f"class {c}: recall undefined")
        if (t + f_p) * (t + f_n) * (t_n + f_p) * (t_n + f_n) == 0:
            degenerate.append(f"class {c}: mcc undefined")
        P[i] = _ratio(t, t + f_p)
        R[i] = _ratio(t, t + f_n)
        F[i] = _ratio(2 * t, 2 * t + f_p + f_n)
        M[i] = _mcc(t, t_n, f_p, f_n)
    support = cm.sum(axis=1)
    present = support > 0
    if present.any():
        macro = {"precision": float(P[present].mean()), "recall": float(R[present].mean()),
                 "f1": float(F[present].mean()), "mcc": float(M[present].mean())}
    else:
        macro = {"precision": 0.0, "recall": 0.0, "f1": 0.0, "mcc": 0.0}
    stp, sfp, sfn, stn = int(tp.sum()), int(fp.sum()), int(fn.sum()), int(tn.sum())
    micro = {"precision": _ratio(stp, stp + sfp), "recall": _ratio(stp, stp + sfn),
             "f1": _ratio(2 * stp, 2 * stp + sfp + sfn), "mcc": float(_mcc(stp, stn, sfp, sfn))}
    return ClassReport(classes, cm, P, R, F, M, support, macro, micro, degenerate)


def confusion_matrix(y_true, y_pred, classes=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if classes is None:
        classes = np.unique(np.concatenate([y_true, y_pred]))
    classes = np.asarray(classes, dtype=np.int64)
    pos = {int(c): i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        cm[pos[t], pos[p]] += 1
    return cm, classes


def coarse_project(class_ids, tree):
    """Replace every fine class id by its coarse id."""
    ids = np.asarray(class_ids, dtype=np.int64)
    uniq, inv = np.unique(ids, return_inverse=True)
    mapped = []
    for c in uniq.tolist():
        if c not in tree.coarse_map:
            raise MissingCoarseClass(f"class {c} has no coarse class")
        mapped.append(tree.coarse_map[c])
    return np.asarray(mapped, dtype=np.int64)[inv].reshape(ids.shape)


def majority_class(labels, classes):
    """Most frequent class per non-zero label (ties to the lowest class id)."""
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    keep = labels != 0
    pairs, counts = np.unique(np.column_stack([labels[keep], classes[keep]]), axis=0,
                              return_counts=True)
    out = {}
    best = {}
    for (lab, cls), n in zip(pairs.tolist(), counts.tolist()):
        if lab not in best or n > best[lab]:
            best[lab] = n
            out[lab] = cls
    return out


def evaluate_pipeline(gt_cloud, pred_cloud, m=0.5, variant=INTERSECTION, tree=None,
                      coarse=False):
    """Detection report from label fields, classification over matched objects.

    The true class of a ground-truth object and the predicted class of a
    segmented object are the majority class over their points.
    """
    if len(gt_cloud) != len(pred_cloud):
        raise InvalidInput(f"point count mismatch: {len(gt_cloud)} vs {len(pred_cloud)}")
    match = match_objects(gt_cloud.label, pred_cloud.label, m, variant)
    gt_cls = majority_class(gt_cloud.label, gt_cloud.class_id)
    sr_cls = majority_class(pred_cloud.label, pred_cloud.class_id)
    y_true = np.array([gt_cls[g] for g, _ in match.pairs], dtype=np.int64)
    y_pred = np.array([sr_cls[s] for _, s in match.pairs], dtype=np.int64)
    if coarse:
        if tree is None:
            raise InvalidParameter("coarse evaluation needs a class tree")
        y_true = coarse_project(y_true, tree)
        y_pred = coarse_project(y_pred, tree)
    cm, classes = confusion_matrix(y_true, y_pred)
    report = classification_metrics(cm, classes)
    if tree is not None:
        report.names = {int(c): (tree.coarse_names.get(int(c)) if coarse else tree.name(c)) or ""
                        for c in classes}
    return match, report


def write_csv(rows, dest=None):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", newline="") as f:
            f.write(text)
    return text
