"""Semantic (confusion-matrix) and instance (IoU-matched) segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricsInputError(ValueError):
    pass


class UndefinedMetricsError(ValueError):
    """No ground-truth or predicted instances at all."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns prediction."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MetricsInputError("confusion matrix must be square")
        if np.any(c < 0):
            raise MetricsInputError("confusion counts must be >= 0")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def one_vs_rest(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-class ``(tp, fp, fn, tn)``."""
        c = self.counts
        tp = np.diag(c)
        fp = c.sum(axis=0) - tp
        fn = c.sum(axis=1) - tp
        tn = c.sum() - tp - fp - fn
        return tp, fp, fn, tn


def confusion(gt, pred, n: int) -> ConfusionMatrix:
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if gt.shape != pred.shape:
        raise MetricsInputError(f"length mismatch: {gt.size} ground-truth vs {pred.size} predicted labels")
    if gt.size and (gt.min() < 0 or pred.min() < 0 or gt.max() >= n or pred.max() >= n):
        raise MetricsInputError(f"labels must lie in [0, {n})")
    flat = np.bincount(gt.astype(np.int64) * n + pred.astype(np.int64), minlength=n * n)
    return ConfusionMatrix(flat.reshape(n, n))


def _ratio(num, den, fill=1.0):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(num.shape, fill, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def binary_kappa(tp, fp, fn, tn) -> float:
    """Cohen's kappa of a two-class table.

    Evaluated as ``(N * agree - E) / (N^2 - E)`` with ``E`` the chance-agreement product sum,
    which equals ``(accuracy - p_c) / (1 - p_c)`` but keeps integer tables exact until one
    final division.
    """
    n = float(tp + fp + fn + tn)
    if n == 0:
        return 1.0
    chance = float((tn + fn) * (tn + fp) + (fn + tp) * (fp + tp))
    den = n * n - chance
    if den <= 0:
        return 1.0 if tp + tn == n else 0.0
    return float((n * (tp + tn) - chance) / den)


def multiclass_kappa(cm: ConfusionMatrix) -> float:
    c = cm.counts.astype(np.float64)
    n = c.sum()
    if n == 0:
        return 1.0
    chance = float((c.sum(axis=0) * c.sum(axis=1)).sum())
    den = n * n - chance
    if den <= 0:
        return 1.0 if np.trace(c) == n else 0.0
    return float((n * np.trace(c) - chance) / den)


def semantic_metrics(cm: ConfusionMatrix) -> dict:
    """OA, mACC (mean class recall), IoU/mIoU, precision, recall, F1 and kappa per class.

    A class absent from both ground truth and prediction gets IoU, recall, precision and F1
    of 1 and is listed under ``empty_classes``.
    """
    if cm.total <= 0:
        raise MetricsInputError("confusion matrix is empty")
    tp, fp, fn, tn = cm.one_vs_rest()
    total = float(cm.total)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall, fill=0.0)
    iou = _ratio(tp, tp + fp + fn)
    empty = (tp + fp + fn) == 0
    f1[empty] = 1.0
    accuracy = (tp + tn) / total
    kappa = np.array([binary_kappa(*map(float, q)) for q in zip(tp, fp, fn, tn)])
    return {
        "oa": float(np.trace(cm.counts) / total),
        "macc": float(recall.mean()),
        "miou": float(iou.mean()),
        "per_class_iou": iou.tolist(),
        "per_class_precision": precision.tolist(),
        "per_class_recall": recall.tolist(),
        "per_class_f1": f1.tolist(),
        "per_class_accuracy": accuracy.tolist(),
        "per_class_kappa": kappa.tolist(),
        "mean_kappa": float(kappa.mean()),
        "kappa": float(kappa[0]) if cm.n == 2 else multiclass_kappa(cm),
        "multiclass_kappa": multiclass_kappa(cm),
        "empty_classes": np.flatnonzero(empty).tolist(),
    }


# --------------------------------------------------------------------------- instances


@dataclass
class InstanceMatchResult:
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.matches)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


def iou_table(gt_labels, pred_labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ids of ground-truth and predicted instances (0 excluded) and their pairwise point-set IoU."""
    gt = np.asarray(gt_labels).ravel().astype(np.int64)
    pred = np.asarray(pred_labels).ravel().astype(np.int64)
    if gt.shape != pred.shape:
        raise MetricsInputError(f"length mismatch: {gt.size} vs {pred.size}")
    g_ids, g_inv, g_size = np.unique(gt, return_inverse=True, return_counts=True)
    p_ids, p_inv, p_size = np.unique(pred, return_inverse=True, return_counts=True)
    inter = np.zeros((len(g_ids), len(p_ids)), dtype=np.int64)
    np.add.at(inter, (g_inv, p_inv), 1)
    gk = g_ids != 0
    pk = p_ids != 0
    inter = inter[np.ix_(gk, pk)]
    union = g_size[gk][:, None] + p_size[pk][None, :] - inter
    iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return g_ids[gk], p_ids[pk], iou


def match_instances(gt_labels, pred_labels, iou_threshold: float = 0.5) -> InstanceMatchResult:
    """Greedy one-to-one matching in descending IoU; ties go to the lower gt id, then lower pred id."""
    g_ids, p_ids, iou = iou_table(gt_labels, pred_labels)
    gi, pj = np.nonzero(iou >= iou_threshold)
    vals = iou[gi, pj]
    order = np.lexsort((p_ids[pj], g_ids[gi], -vals))
    used_g, used_p = set(), set()
    matches = []
    for k in order:
        a, b = int(g_ids[gi[k]]), int(p_ids[pj[k]])
        if a in used_g or b in used_p:
            continue
        used_g.add(a)
        used_p.add(b)
        matches.append((a, b, float(vals[k])))
    return InstanceMatchResult(
        matches=matches,
        unmatched_gt=[int(g) for g in g_ids if int(g) not in used_g],
        unmatched_pred=[int(p) for p in p_ids if int(p) not in used_p],
    )


def detection_metrics(result: InstanceMatchResult) -> dict:
    """Completeness (recall), omission error (1 - recall), commission error (1 - precision) and F1."""
    tp, fp, fn = result.tp, result.fp, result.fn
    if tp + fn == 0 and tp + fp == 0:
        raise UndefinedMetricsError("no ground-truth or predicted instances")
    completeness = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * completeness / (precision + completeness) if precision + completeness else 0.0
    return {
        "completeness": completeness,
        "omission_error": 1.0 - completeness,
        "commission_error": 1.0 - precision if tp + fp else 0.0,
        "precision": precision,
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "fn": fn,
    }
