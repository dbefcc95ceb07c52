"""Thresholded classification metrics and ROC-AUC for mask evaluation.

Conventions, stated once and used everywhere: probabilities binarize at a
configurable threshold (default 0.5, ties to positive).  Precision with
no predicted positives is 1.0 if nothing was missed (FN == 0) else 0.0;
recall with no actual positives is 1.0 if nothing was falsely raised
(FP == 0) else 0.0; F1 is 0.0 when precision + recall is 0.  AUC follows
the rank-statistic form with half credit for ties and refuses
single-class ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .losses import dice_coef, dice_coef_raw, dice_loss_value, iou
from .tensor import ShapeError

__all__ = [
    "ConfusionCounts",
    "MetricsReport",
    "confusion_counts",
    "confusion_metrics",
    "auc_roc",
    "evaluate_pair",
    "summarize",
    "METRIC_COLUMNS",
]

# column order mirrors the reporting tables
METRIC_COLUMNS = ("Dice", "AC", "IOU", "Precision", "Recall", "F1 Score", "AUC")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_counts(gt, probs, threshold: float = 0.5) -> ConfusionCounts:
    gt = np.asarray(gt)
    probs = np.asarray(probs)
    if gt.shape != probs.shape:
        raise ShapeError(f"confusion: shapes {gt.shape} and {probs.shape} differ")
    g = gt.astype(bool)
    p = probs >= threshold
    return ConfusionCounts(
        tp=int(np.logical_and(g, p).sum()),
        tn=int(np.logical_and(~g, ~p).sum()),
        fp=int(np.logical_and(~g, p).sum()),
        fn=int(np.logical_and(g, ~p).sum()),
    )


def _precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


def _recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def confusion_metrics(gt, probs, threshold: float = 0.5):
    """Counts plus accuracy, precision, recall, F1 at the given threshold."""
    c = confusion_counts(gt, probs, threshold)
    ac = (c.tp + c.tn) / c.total
    p = _precision(c)
    r = _recall(c)
    f1 = 0.0 if p + r == 0 else 2.0 * p * r / (p + r)
    return c, ac, p, r, f1


def auc_roc(gt, probs) -> float:
    """Probability a positive pixel outranks a negative one (ties half)."""
    gt = np.asarray(gt).reshape(-1).astype(bool)
    probs = np.asarray(probs).reshape(-1)
    if gt.shape != probs.shape:
        raise ShapeError(f"auc_roc: shapes {gt.shape} and {probs.shape} differ")
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes in the ground truth")
    ranks = rankdata(probs)
    return (ranks[gt].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsReport:
    """Per-image evaluation row; ``auc`` is None for single-class ground truth."""

    dice: float
    dice_raw: float
    accuracy: float
    iou: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    loss: float
    counts: ConfusionCounts
    threshold: float

    def as_row(self) -> dict:
        return {
            "Dice": self.dice,
            "AC": self.accuracy,
            "IOU": self.iou,
            "Precision": self.precision,
            "Recall": self.recall,
            "F1 Score": self.f1,
            "AUC": self.auc,
        }


def evaluate_pair(gt, probs, threshold: float = 0.5) -> MetricsReport:
    """All metrics for one ground-truth mask / probability map pair."""
    gt = np.asarray(gt)
    probs = np.asarray(probs)
    pred = probs >= threshold
    c, ac, p, r, f1 = confusion_metrics(gt, probs, threshold)
    both_classes = 0 < gt.astype(bool).sum() < gt.size
    return MetricsReport(
        dice=dice_coef(gt, pred),
        dice_raw=dice_coef_raw(gt, pred),
        accuracy=ac,
        iou=iou(gt, pred),
        precision=p,
        recall=r,
        f1=f1,
        auc=auc_roc(gt, probs) if both_classes else None,
        loss=dice_loss_value(gt, probs),
        counts=c,
        threshold=threshold,
    )


def summarize(reports) -> dict:
    """Mean of per-image metrics; AUC averages only where defined."""
    reports = list(reports)
    if not reports:
        raise ValueError("summarize needs at least one report")
    out = {}
    for key in ("Dice", "AC", "IOU", "Precision", "Recall", "F1 Score"):
        out[key] = float(np.mean([r.as_row()[key] for r in reports]))
    aucs = [r.auc for r in reports if r.auc is not None]
    out["AUC"] = float(np.mean(aucs)) if aucs else None
    out["dice_raw"] = float(np.mean([r.dice_raw for r in reports]))
    out["loss"] = float(np.mean([r.loss for r in reports]))
    return out
