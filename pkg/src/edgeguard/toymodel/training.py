"""Plain SGD training on J_tot = J_seg + J_depth + mu * J_con."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..arraycore import make_rng
from .network import ToyNetParams
from .objectives import total_loss_grads

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-2
    epochs: int = 40
    batch_size: int = 4
    mu: float = 0.003
    lam: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("invalid training schedule")


def train(params: ToyNetParams, images, labels, depth_gt, cfg: TrainConfig = TrainConfig()):
    """Train a copy of ``params``; returns ``(params, epoch_log)``.

    ``epoch_log`` holds one dict of mean losses per epoch. ``lam=0`` is
    accepted (frozen encoder) even though the usual range is (0, 1].
    Raises :class:`TrainingDiverged` if a batch's J_tot exceeds ten times the
    first batch's value or parameters become non-finite.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    depth_gt = np.asarray(depth_gt)
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training split")
    params = params.copy()
    rng = make_rng(cfg.seed)
    first_total = None
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"seg": 0.0, "depth": 0.0, "con": 0.0, "tot": 0.0}
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            losses, grads = total_loss_grads(params, images[idx], labels[idx], depth_gt[idx], cfg.mu, cfg.lam)
            if first_total is None:
                first_total = losses["tot"]
            if not np.isfinite(losses["tot"]) or losses["tot"] > 10 * first_total:
                raise TrainingDiverged(f"J_tot={losses['tot']:.4g} at epoch {epoch} (initial {first_total:.4g})")
            for name, g in grads.arrays().items():
                getattr(params, name)[...] -= cfg.lr * g
            if not params.all_finite():
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")
            for k in sums:
                sums[k] += losses[k] * len(idx)
        history.append({k: v / n for k, v in sums.items()})
        log.info("epoch %d: %s", epoch, " ".join(f"{k}={v:.4f}" for k, v in history[-1].items()))
    return params, history
