"""Random noises and white-box attacks on the toy network.

Strength is the RMS of the perturbation, ``sqrt(mean(r**2))``, given in
8-bit levels (1, 2, 4, ..., 32) and divided by 255. Perturbed images are
clipped to [0, 1].
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .arraycore import as_array
from .toymodel.network import ToyNetParams
from .toymodel.objectives import LOSS_MODES, adv_gradient

log = logging.getLogger(__name__)

KINDS = ("gaussian", "salt_pepper", "fgsm", "bim", "pgd")
EPS_LEVELS = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "fgsm"
    eps_levels: int = 8
    loss_mode: str = "SD"
    mu_tilde: float = 0.0
    steps: int = 10
    alpha: float | None = None  # defaults to eps / 4
    random_start: bool | None = None  # defaults to True for pgd only
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.steps < 1 or self.step_size <= 0:
            raise ValueError("steps must be >= 1 and alpha > 0")
        if self.random_start is None:
            object.__setattr__(self, "random_start", self.kind == "pgd")

    @property
    def eps(self) -> float:
        return self.eps_levels / 255.0

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.eps / 4

    @property
    def label(self) -> str:
        if self.loss_mode == "SD+ECL":
            return f"SD+ECL({self.mu_tilde:g})"
        return self.loss_mode


def rms(r) -> float:
    r = np.asarray(r, dtype=np.float64)
    return float(np.sqrt(np.mean(r * r)))


def apply_perturbation(image, r) -> np.ndarray:
    x = as_array(image)
    r = np.asarray(r)
    if x.shape != r.shape:
        raise ValueError(f"perturbation shape {r.shape} does not match image {x.shape}")
    return np.clip(x + r, 0.0, 1.0)


def gaussian_noise(shape, eps: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. N(0, eps^2) noise truncated to [-1, 1]."""
    return np.clip(rng.normal(0.0, eps, size=shape), -1.0, 1.0)


def _best_fill(cand: np.ndarray, pix: np.ndarray, residual: float) -> tuple[int, ...]:
    """Indices of at most two candidates whose energies best sum to ``residual``.

    Two picks must refer to different pixels. Returns ``()`` when adding
    nothing is already the closest option.
    """
    if cand.size == 0:
        return ()
    best, best_gap = (), abs(residual)
    i = int(np.argmin(np.abs(cand - residual)))
    if abs(cand[i] - residual) < best_gap:
        best, best_gap = (i,), abs(cand[i] - residual)
    srt = np.argsort(cand, kind="stable")
    e = cand[srt]
    pos = np.searchsorted(e, residual - e)
    for off in (-1, 0):
        j = np.clip(pos + off, 0, e.size - 1)
        gap = np.abs(e + e[j] - residual)
        gap[pix[srt] == pix[srt[j]]] = np.inf
        a = int(np.argmin(gap))
        if gap[a] < best_gap:
            best, best_gap = (int(srt[a]), int(srt[j[a]])), float(gap[a])
    return best


def salt_pepper_noise(image, eps: float, rng: np.random.Generator):
    """Flip pixels (all channels) to 0 or 1 until the RMS matches ``eps``.

    Pixels are flipped in a fixed random order, so the energy grows
    monotonically with the flip count and the largest count that stays at or
    below the target is found by bisection. Up to two more pixels, with either
    polarity, are then flipped to best fill the remaining gap. Returns ``(r, attained)``; when even
    flipping every pixel falls short, that maximal perturbation is returned
    with ``attained=False``.
    """
    x = as_array(image).astype(np.float64)
    h, w, c = x.shape
    order = rng.permutation(h * w)
    salt = rng.integers(0, 2, size=h * w).astype(np.float64)
    flat = x.reshape(h * w, c)
    delta = salt[:, None] - flat  # change if a pixel is flipped
    # energy[k] = squared norm of r after flipping the first k pixels
    energy = np.concatenate([[0.0], np.cumsum((delta[order] ** 2).sum(axis=1))])
    target = eps * eps * x.size
    k = int(np.searchsorted(energy, target, side="right")) - 1
    r = np.zeros_like(flat)
    r[order[:k]] = delta[order[:k]]
    # top-up with one or two extra pixels of either polarity
    rest = order[k:]
    cand = np.concatenate([(flat[rest] ** 2).sum(axis=1), ((1.0 - flat[rest]) ** 2).sum(axis=1)])
    pix = np.concatenate([rest, rest])
    pol = np.repeat([0.0, 1.0], rest.size)
    for pick in _best_fill(cand, pix, target - energy[k]):
        r[pix[pick]] = pol[pick] - flat[pix[pick]]
    got = rms(r)
    attained = abs(got - eps) <= 0.02 * eps
    if not attained:
        log.debug("salt & pepper: requested eps=%.4f not attained (got %.4f)", eps, got)
        # one notice per strength, not one per image
        warnings.warn(f"salt & pepper cannot reach RMS {eps:.4f} within 2% on some images", RuntimeWarning, stacklevel=2)
    return r.reshape(h, w, c), attained


def fgsm(params: ToyNetParams, images, labels, depth_gt, eps: float, loss_mode: str = "SD", mu_tilde: float = 0.0) -> np.ndarray:
    """Single sign-gradient step; pixels with zero gradient stay unperturbed."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    _, g = adv_gradient(params, images, labels, depth_gt, loss_mode, mu_tilde)
    return eps * np.sign(g).reshape(np.shape(as_array(images)))


def iterative_attack(params: ToyNetParams, images, labels, depth_gt, spec: AttackSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """BIM / PGD under the L-inf ball of radius eps; returns final image minus original."""
    if spec.kind not in ("bim", "pgd"):
        raise ValueError("iterative_attack handles kind 'bim' or 'pgd'")
    x0 = np.asarray(as_array(images), dtype=np.float64)
    eps, alpha = spec.eps, spec.step_size
    x = x0
    if spec.random_start:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        x = np.clip(x0 + rng.uniform(-eps, eps, size=x0.shape), 0.0, 1.0)
    for _ in range(spec.steps):
        _, g = adv_gradient(params, x, labels, depth_gt, spec.loss_mode, spec.mu_tilde)
        step = x + alpha * np.sign(g).reshape(x.shape)
        x = np.clip(x0 + np.clip(step - x0, -eps, eps), 0.0, 1.0)
    return x - x0


def perturb(params: ToyNetParams, images, labels, depth_gt, spec: AttackSpec, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Perturbations for a batch; ``rngs`` holds one generator per sample.

    Returns ``(perturbed images, perturbations)``, where the perturbation is
    the pre-clip ``r`` (so FGSM keeps RMS = eps exactly).
    """
    x = np.asarray(images, dtype=np.float64)
    n = x.shape[0]
    if spec.kind == "gaussian":
        r = np.stack([gaussian_noise(x.shape[1:], spec.eps, rngs[k]) for k in range(n)])
    elif spec.kind == "salt_pepper":
        r = np.stack([salt_pepper_noise(x[k], spec.eps, rngs[k])[0] for k in range(n)])
    elif spec.kind == "fgsm":
        r = fgsm(params, x, labels, depth_gt, spec.eps, spec.loss_mode, spec.mu_tilde)
    else:
        r = np.stack(
            [
                iterative_attack(params, x[k : k + 1], labels[k : k + 1], depth_gt[k : k + 1], spec, rngs[k])[0]
                for k in range(n)
            ]
        )
    return np.clip(x + r, 0.0, 1.0), r
