"""Task metrics (mIoU, depth error/accuracy) and detection metrics (TPR, ROC)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..arraycore import as_array
from ..detector import decide, thresholds_for_gamma, vote


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """Rows are ground-truth classes, columns predicted classes (1-based inputs)."""
    p = as_array(pred).astype(np.int64).ravel() - 1
    g = as_array(gt).astype(np.int64).ravel() - 1
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth differ in shape")
    return np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


def miou(pred, gt, num_classes: int) -> float:
    """Mean IoU over classes present in the prediction or the ground truth."""
    if np.shape(as_array(pred)) != np.shape(as_array(gt)):
        raise ValueError("prediction and ground truth differ in shape")
    cm = confusion_matrix(pred, gt, num_classes)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    present = union > 0
    return float((tp[present] / union[present]).mean())


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float  # delta < 1.25
    a2: float  # delta < 1.25^2
    a3: float  # delta < 1.25^3


def _mean(v: np.ndarray) -> float:
    # correctly rounded, so the result does not depend on summation order
    return math.fsum(v.ravel().tolist()) / v.size


def depth_metrics(pred, gt) -> DepthMetrics:
    d = as_array(pred).astype(np.float64)
    g = as_array(gt).astype(np.float64)
    if d.shape != g.shape:
        raise ValueError("prediction and ground truth differ in shape")
    ratio = np.maximum(d / g, g / d)
    diff = d - g
    return DepthMetrics(
        abs_rel=_mean(np.abs(diff) / g),
        sq_rel=_mean(diff**2 / g),
        rmse=math.sqrt(_mean(diff**2)),
        rmse_log=math.sqrt(_mean((np.log(d) - np.log(g)) ** 2)),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
    )


def tpr_at_fpr(clean_decisions, perturbed_decisions) -> tuple[float, float]:
    """(flagged fraction of perturbed inputs, flagged fraction of clean inputs)."""
    clean = np.asarray(clean_decisions)
    pert = np.asarray(perturbed_decisions)
    if clean.size == 0 or pert.size == 0:
        raise ValueError("decision lists must be nonempty")
    return float(pert.mean()), float(clean.mean())


def roc_points(clean_scores, perturbed_scores) -> np.ndarray:
    """ROC of the rule "flag if score < threshold" as an (M, 2) array of (FPR, TPR).

    The threshold sweeps every distinct observed score plus +inf, so the curve
    runs from (0, 0) to (1, 1) and is non-decreasing in both coordinates.
    """
    clean = np.sort(np.asarray(clean_scores, dtype=np.float64))
    pert = np.sort(np.asarray(perturbed_scores, dtype=np.float64))
    if clean.size == 0 or pert.size == 0:
        raise ValueError("score lists must be nonempty")
    thresholds = np.concatenate([np.unique(np.concatenate([clean, pert])), [np.inf]])
    fpr = np.searchsorted(clean, thresholds, side="left") / clean.size
    tpr = np.searchsorted(pert, thresholds, side="left") / pert.size
    return np.stack([fpr, tpr], axis=1)


def roc_auc(points: np.ndarray) -> float:
    pts = np.asarray(points)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def majority_roc_points(clean_scores, perturbed_scores) -> np.ndarray:
    """ROC of the majority vote, sweeping the shared clean rank k = 0..N."""
    clean = np.asarray(clean_scores, dtype=np.float64)
    pert = np.asarray(perturbed_scores, dtype=np.float64)
    n = len(clean)
    pts = []
    for k in range(n + 1):
        theta = thresholds_for_gamma(clean, k / n)
        pts.append((decide(vote(clean, theta)).mean(), decide(vote(pert, theta)).mean()))
    pts.append((1.0, 1.0))
    return np.maximum.accumulate(np.array([(0.0, 0.0)] + pts), axis=0)


def histogram(scores, bins: int = 50, lo: float = -1.0, hi: float = 1.0):
    """Fixed-layout histogram; scores outside [lo, hi] are clipped into the end bins."""
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(np.asarray(scores, dtype=np.float64), lo, hi), bins=edges)
    return edges, counts
