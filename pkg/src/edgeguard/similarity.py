"""SSIM between edge planes, plus the MAE alternative.

Windowed local statistics use reflect padding (mirror without repeating the
border sample). Because padding and a separable window are both linear, the
filter on an H x W plane is ``A_h @ x @ A_w.T`` with precomputed H x H and
W x W matrices, and its adjoint is ``A_h.T @ g @ A_w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .edgeops import EdgeField


@dataclass(frozen=True)
class SsimConfig:
    window: str = "gaussian"  # "gaussian" or "uniform"
    size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window not in ("gaussian", "uniform"):
            raise ValueError(f"unknown window {self.window!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError("window size must be odd and positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DETECTOR_SSIM = SsimConfig("gaussian", 11, 1.5)
LOSS_SSIM = SsimConfig("uniform", 3)


def _weights(cfg: SsimConfig) -> np.ndarray:
    if cfg.window == "uniform":
        return np.full(cfg.size, 1.0 / cfg.size)
    t = np.arange(cfg.size) - (cfg.size - 1) / 2
    w = np.exp(-(t**2) / (2 * cfg.sigma**2))
    return w / w.sum()


@lru_cache(maxsize=64)
def window_matrix(n: int, cfg: SsimConfig) -> np.ndarray:
    """1-D reflect-padded window filter on length-``n`` signals as an n x n matrix."""
    r = cfg.size // 2
    if n <= r:
        raise ValueError(f"signal length {n} too short for a {cfg.size}-tap reflect window")
    src = np.pad(np.arange(n), r, mode="reflect")
    w = _weights(cfg)
    m = np.zeros((n, n))
    for i in range(n):
        np.add.at(m[i], src[i : i + cfg.size], w)
    m.flags.writeable = False
    return m


def _filt(x, ah, aw):
    return ah @ x @ aw.T


def _filt_t(g, ah, aw):
    return ah.T @ g @ aw


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def _stats(a, b, cfg):
    ah = window_matrix(a.shape[-2], cfg)
    aw = window_matrix(a.shape[-1], cfg)
    mu_a, mu_b = _filt(a, ah, aw), _filt(b, ah, aw)
    var_a = _filt(a * a, ah, aw) - mu_a * mu_a
    var_b = _filt(b * b, ah, aw) - mu_b * mu_b
    cov = _filt(a * b, ah, aw) - mu_a * mu_b
    return ah, aw, mu_a, mu_b, var_a, var_b, cov


def ssim_map(a, b, cfg: SsimConfig = DETECTOR_SSIM) -> np.ndarray:
    """Local SSIM at every pixel of two (..., H, W) planes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    _, _, mu_a, mu_b, var_a, var_b, cov = _stats(a, b, cfg)
    num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    return num / den


def ssim_map_vjp(a, b, g=None, cfg: SsimConfig = LOSS_SSIM):
    """SSIM map and the gradients of ``sum(g * ssim_map)`` w.r.t. ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    ah, aw, mu_a, mu_b, var_a, var_b, cov = _stats(a, b, cfg)
    a1 = 2 * mu_a * mu_b + cfg.c1
    a2 = 2 * cov + cfg.c2
    b1 = mu_a * mu_a + mu_b * mu_b + cfg.c1
    b2 = var_a + var_b + cfg.c2
    s = a1 * a2 / (b1 * b2)
    if g is None:
        g = np.ones_like(s)

    # partials of s w.r.t. the local statistics
    d_cov = g * 2 * a1 / (b1 * b2)
    d_var = -g * s / b2  # same for var_a and var_b
    d_mu_a = g * (2 * mu_b * a2 / (b1 * b2) - s * 2 * mu_a / b1)
    d_mu_b = g * (2 * mu_a * a2 / (b1 * b2) - s * 2 * mu_b / b1)
    # var = F(x^2) - mu^2 and cov = F(ab) - mu_a mu_b
    d_mu_a = d_mu_a - 2 * mu_a * d_var - mu_b * d_cov
    d_mu_b = d_mu_b - 2 * mu_b * d_var - mu_a * d_cov

    back_var = _filt_t(d_var, ah, aw)
    back_cov = _filt_t(d_cov, ah, aw)
    grad_a = _filt_t(d_mu_a, ah, aw) + 2 * a * back_var + b * back_cov
    grad_b = _filt_t(d_mu_b, ah, aw) + 2 * b * back_var + a * back_cov
    return s, grad_a, grad_b


def _scaled_planes(a: EdgeField, b: EdgeField):
    pa, pb = np.asarray(a.planes, np.float64), np.asarray(b.planes, np.float64)
    if a.binary and b.binary:
        return pa, pb
    scale = np.maximum(
        np.maximum(pa.max(axis=(-2, -1), keepdims=True), pb.max(axis=(-2, -1), keepdims=True)),
        1e-6,
    )
    return (pa if a.binary else pa / scale), (pb if b.binary else pb / scale)


def ssim_global(a: EdgeField, b: EdgeField, cfg: SsimConfig = DETECTOR_SSIM) -> np.ndarray:
    """Mean local SSIM over pixels and both planes.

    Each plane pair is divided by its joint maximum first (binary fields are
    left as they are), so a unit dynamic range applies to every modality.
    Returns a scalar, or one value per leading batch element.
    """
    _check_shapes(a.planes, b.planes)
    pa, pb = _scaled_planes(a, b)
    return ssim_map(pa, pb, cfg).mean(axis=(-3, -2, -1))


def mae_consistency(a: EdgeField, b: EdgeField) -> np.ndarray:
    """Negated mean absolute difference, so higher still means more consistent."""
    _check_shapes(a.planes, b.planes)
    return -np.abs(np.asarray(a.planes, np.float64) - b.planes).mean(axis=(-3, -2, -1))
