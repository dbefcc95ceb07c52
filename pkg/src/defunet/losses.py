"""Overlap losses and coefficients.

The training objective is the negative smoothed dice ratio

    loss = -(2 * sum(g * p) + 1) / (sum(g^2) + sum(p^2) + 1),

where g is the binary target and p the predicted probabilities.  The +1
in numerator and denominator keeps the ratio defined when both masks are
empty and makes a perfect binary prediction score exactly -1.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Node, as_node
from .tensor import ShapeError

__all__ = ["dice_loss", "dice_loss_value", "dice_coef", "dice_coef_raw", "iou"]


def dice_loss(g, p) -> Node:
    """Differentiable (in p) smoothed dice loss; g is treated as constant."""
    g_data = g.data if isinstance(g, Node) else np.asarray(g)
    p = as_node(p)
    if g_data.shape != p.data.shape:
        raise ShapeError(f"dice_loss: target shape {g_data.shape} != prediction {p.data.shape}")
    g_const = Node(g_data.astype(p.data.dtype, copy=False))
    inter = ops.sum_all(ops.mul(p, g_const))
    p_sq = ops.sum_all(ops.mul(p, p))
    g_sq = float((g_data.astype(np.float64) ** 2).sum())
    num = ops.add_const(ops.scale(inter, 2.0), 1.0)
    den = ops.add_const(p_sq, g_sq + 1.0)
    return ops.scale(ops.div(num, den), -1.0)


def dice_loss_value(g, p) -> float:
    """Plain-number dice loss for monitoring (no graph involvement)."""
    g = np.asarray(g, dtype=np.float64)
    p = np.asarray(p.data if isinstance(p, Node) else p, dtype=np.float64)
    if g.shape != p.shape:
        raise ShapeError(f"dice_loss: target shape {g.shape} != prediction {p.shape}")
    return -(2.0 * (g * p).sum() + 1.0) / ((g * g).sum() + (p * p).sum() + 1.0)


def _binary_pair(gt, pr, op_name):
    gt = np.asarray(gt)
    pr = np.asarray(pr)
    if gt.shape != pr.shape:
        raise ShapeError(f"{op_name}: mask shapes {gt.shape} and {pr.shape} differ")
    gt = gt.astype(bool)
    pr = pr.astype(bool)
    return gt, pr


def dice_coef(gt, pr) -> float:
    """Smoothed dice overlap of two binary masks: (2|I|+1)/(|GT|+|PR|+1)."""
    gt, pr = _binary_pair(gt, pr, "dice_coef")
    inter = np.logical_and(gt, pr).sum()
    return (2.0 * inter + 1.0) / (gt.sum() + pr.sum() + 1.0)


def dice_coef_raw(gt, pr) -> float:
    """Unsmoothed dice; both-empty pairs score 1.0 by convention."""
    gt, pr = _binary_pair(gt, pr, "dice_coef_raw")
    denom = gt.sum() + pr.sum()
    if denom == 0:
        return 1.0
    return 2.0 * np.logical_and(gt, pr).sum() / denom


def iou(gt, pr) -> float:
    """Smoothed intersection over union: (|I|+1)/(|U|+1)."""
    gt, pr = _binary_pair(gt, pr, "iou")
    inter = np.logical_and(gt, pr).sum()
    union = np.logical_or(gt, pr).sum()
    return (inter + 1.0) / (union + 1.0)
