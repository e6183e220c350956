"""Composite objectives: the training loss and the attacker's loss."""
from __future__ import annotations

import numpy as np

from .losses import depth_loss, ecl_loss, seg_loss
from .network import ToyNetParams, encoder_backward, forward, head_backward, probs_to_logits_grad

LOSS_MODES = ("S", "D", "SD", "SD+ECL")


def _add(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


def total_loss_grads(params: ToyNetParams, images, labels, depth_gt, mu: float = 0.003, lam: float = 1.0):
    """Batch-mean J_tot = J_seg + J_depth + mu*J_con and its parameter gradients.

    ``lam`` scales the task-loss gradients where they enter the shared
    encoder; the heads and the consistency term always get full gradients.
    With ``lam=1`` the result is the exact gradient of J_tot.
    """
    act = forward(params, images)
    j_seg, d_logits = seg_loss(act.probs, labels)
    j_depth, d_sigma = depth_loss(act.depth, depth_gt)
    j_con, dp_con, ds_con, _ = ecl_loss(act.probs, act.depth, act.x)

    g_task, dh_task = head_backward(params, act, d_logits, d_sigma)
    dh = lam * dh_task
    grads = g_task
    if mu != 0.0:
        g_con, dh_con = head_backward(params, act, probs_to_logits_grad(act.probs, mu * dp_con), mu * ds_con)
        grads = _add(grads, g_con)
        dh = dh + dh_con
    g_enc, _ = encoder_backward(params, act, dh)
    grads = ToyNetParams(**_add(grads, g_enc))
    losses = {"seg": j_seg, "depth": j_depth, "con": j_con, "tot": j_seg + j_depth + mu * j_con}
    return losses, grads


def adv_loss(params: ToyNetParams, images, labels, depth_gt, mode: str = "SD", mu_tilde: float = 0.0) -> np.ndarray:
    """Per-sample attacker loss without gradients."""
    return adv_gradient(params, images, labels, depth_gt, mode, mu_tilde, need_grad=False)[0]


def adv_gradient(params: ToyNetParams, images, labels, depth_gt, mode: str = "SD", mu_tilde: float = 0.0, need_grad: bool = True):
    """Per-sample attacker loss and its gradient w.r.t. the input pixels.

    Modes: ``S`` (segmentation), ``D`` (depth), ``SD`` (both) and
    ``SD+ECL`` (both minus ``mu_tilde`` times the consistency loss). Losses are
    computed per sample, so one image's gradient never depends on the rest of
    the batch. Returns ``(losses (N,), grad (N, H, W, C))``.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    if mode == "SD+ECL" and mu_tilde < 0:
        raise ValueError("mu_tilde must be nonnegative")
    act = forward(params, images)
    n = act.x.shape[0]
    labels = np.asarray(labels).reshape(act.probs.shape[:3])
    depth_gt = np.asarray(depth_gt).reshape(act.depth.shape)

    loss = np.zeros(n)
    d_logits = d_sigma = None
    if mode in ("S", "SD", "SD+ECL"):
        j, d_logits = seg_loss(act.probs, labels, per_sample=True)
        loss += j
    if mode in ("D", "SD", "SD+ECL"):
        j, d_sigma = depth_loss(act.depth, depth_gt, per_sample=True)
        loss += j
    d_direct = None
    if mode == "SD+ECL":
        j, dp, ds, dx = ecl_loss(act.probs, act.depth, act.x, per_sample=True)
        loss -= mu_tilde * j
        d_logits = d_logits - probs_to_logits_grad(act.probs, mu_tilde * dp)
        d_sigma = d_sigma - mu_tilde * ds
        d_direct = -mu_tilde * dx
    if not need_grad:
        return loss, None

    _, dh = head_backward(params, act, d_logits, d_sigma)
    _, grad = encoder_backward(params, act, dh, want_params=False, want_input=True)
    if d_direct is not None:
        grad = grad + d_direct
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite input gradient")
    return loss, grad
