"""Task losses and the edge-consistency loss, each with analytic gradients.

All losses take batched arrays with a leading sample axis. With
``per_sample=False`` they return the batch mean and the gradient of that
mean; with ``per_sample=True`` they return one loss per sample and the
gradient of their sum, so each sample's gradient is independent of the
others in the batch.
"""
from __future__ import annotations

import numpy as np

from ..edgeops import channel_diffs, forward_diff, forward_diff_adjoint
from ..similarity import LOSS_SSIM, SsimConfig, ssim_map_vjp
from .network import DEPTH_A

CLASS_WEIGHT_CAP = 10.0


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Inverse-frequency weights over the given label pixels.

    Present classes are normalized to mean weight 1; every weight is capped
    at ``CLASS_WEIGHT_CAP`` and absent classes get the cap.
    """
    counts = np.bincount(labels.ravel() - 1, minlength=num_classes)[:num_classes].astype(np.float64)
    w = np.full(num_classes, CLASS_WEIGHT_CAP)
    present = counts > 0
    inv = counts.sum() / counts[present]
    w[present] = inv / inv.mean()
    return np.minimum(w, CLASS_WEIGHT_CAP)


def seg_loss(probs, labels, per_sample: bool = False):
    """Class-balanced cross-entropy; returns (loss, gradient w.r.t. logits)."""
    p = np.asarray(probs, dtype=np.float64)
    lab = np.asarray(labels).astype(np.int64)
    if p.ndim == 3:
        p, lab = p[None], lab[None]
    n, h, w, s = p.shape
    if lab.shape != (n, h, w):
        raise ValueError(f"labels {lab.shape} do not match probabilities {p.shape}")
    if per_sample:
        wmap = np.stack([class_weights(lab[k], s)[lab[k] - 1] for k in range(n)])
    else:
        wmap = class_weights(lab, s)[lab - 1]
    onehot = np.eye(s)[lab - 1]
    p_true = np.take_along_axis(p, lab[..., None] - 1, axis=-1)[..., 0]
    ce = -np.log(np.maximum(p_true, 1e-300))
    grad = wmap[..., None] * (p - onehot)
    if per_sample:
        return (wmap * ce).mean(axis=(1, 2)), grad / (h * w)
    return float((wmap * ce).mean()), grad / (n * h * w)


def depth_loss(depth, depth_gt, per_sample: bool = False):
    """Mean absolute log-depth error; returns (loss, gradient w.r.t. sigma).

    Depth is decoded as 1 / (a*sigma + b), hence d(log d)/d(sigma) = -a*d.
    """
    d = np.asarray(depth, dtype=np.float64)
    gt = np.asarray(depth_gt, dtype=np.float64)
    if d.ndim == 2:
        d, gt = d[None], gt[None]
    if d.shape != gt.shape:
        raise ValueError(f"depth {d.shape} does not match ground truth {gt.shape}")
    n, h, w = d.shape
    diff = np.log(d) - np.log(gt)
    grad = np.sign(diff) * (-DEPTH_A * d)
    if per_sample:
        return np.abs(diff).mean(axis=(1, 2)), grad / (h * w)
    return float(np.abs(diff).mean()), grad / (n * h * w)


# ---------------------------------------------------------------------------
# edge-consistency loss


def _soft_edges(a):
    """Channel-mean absolute differences and what backprop needs from them."""
    diffs = channel_diffs(a)  # (N, 2, H, W, C)
    return np.abs(diffs).mean(axis=-1), np.sign(diffs) / a.shape[-1]


def _soft_edges_backward(ge, sgn):
    dd = ge[..., None] * sgn
    return forward_diff_adjoint(dd[:, 0], -3) + forward_diff_adjoint(dd[:, 1], -2)


def _depth_edges(depth):
    eta = 1.0 / depth
    mean = eta.mean(axis=(-2, -1), keepdims=True)
    tilde = eta / mean
    diffs = np.stack([forward_diff(tilde, -2), forward_diff(tilde, -1)], axis=1)
    return np.abs(diffs), (np.sign(diffs), eta, mean)


def _depth_edges_backward(ge, saved):
    sgn, eta, mean = saved
    dd = ge * sgn
    d_tilde = forward_diff_adjoint(dd[:, 0], -2) + forward_diff_adjoint(dd[:, 1], -1)
    npx = eta.shape[-2] * eta.shape[-1]
    # tilde = eta / mean(eta)
    d_eta = d_tilde / mean - (d_tilde * eta).sum(axis=(-2, -1), keepdims=True) / (mean**2 * npx)
    # eta = a*sigma + b
    return DEPTH_A * d_eta


def ecl_loss(probs, depth, image, per_sample: bool = False, cfg: SsimConfig = LOSS_SSIM):
    """One minus the mean 3x3-patch SSIM over pairs (y,x), (x,d), (y,d) and both directions.

    Returns ``(loss, d_probs, d_sigma, d_image)``. Training treats the image
    as constant and ignores ``d_image``; input-gradient attacks use it.
    """
    p = np.asarray(probs, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    x = np.asarray(image, dtype=np.float64)
    if p.ndim == 3:
        p, d, x = p[None], d[None], x[None]
    n, h, w = d.shape
    if p.shape[:3] != (n, h, w) or x.shape[:3] != (n, h, w):
        raise ValueError("probabilities, depth and image must share spatial shape")

    e_y, sgn_y = _soft_edges(p)
    e_x, sgn_x = _soft_edges(x)
    e_d, saved_d = _depth_edges(d)

    coef = -1.0 / (6 * h * w) / (1 if per_sample else n)
    g = np.full(e_y.shape, coef)
    s_yx, gy1, gx1 = ssim_map_vjp(e_y, e_x, g, cfg)
    s_xd, gx2, gd1 = ssim_map_vjp(e_x, e_d, g, cfg)
    s_yd, gy2, gd2 = ssim_map_vjp(e_y, e_d, g, cfg)

    total = (s_yx + s_xd + s_yd).sum(axis=(1, 2, 3))
    per = 1.0 - total / (6 * h * w)
    loss = per if per_sample else float(per.mean())
    d_probs = _soft_edges_backward(gy1 + gy2, sgn_y)
    d_sigma = _depth_edges_backward(gd1 + gd2, saved_d)
    d_image = _soft_edges_backward(gx1 + gx2, sgn_x)
    return loss, d_probs, d_sigma, d_image
