"""Edge fields of images, segmentation outputs and depth maps.

Every edge field holds two planes stacked on axis ``-3``: index 0 holds
height-direction differences, index 1 holds width-direction differences.
Differences are forward (``v[i+1] - v[i]``) and the trailing row/column is
zero so all planes stay H x W. Functions accept arbitrary leading batch dims.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arraycore import as_array

H_PLANE, W_PLANE = 0, 1


@dataclass(frozen=True)
class EdgeField:
    planes: np.ndarray  # (..., 2, H, W)
    binary: bool = False

    def __post_init__(self):
        p = np.asarray(self.planes)
        if p.ndim < 3 or p.shape[-3] != 2:
            raise ValueError(f"edge planes must have shape (..., 2, H, W), got {p.shape}")
        if p.size and p.min() < 0:
            raise ValueError("edge magnitudes are nonnegative")
        object.__setattr__(self, "planes", p)

    @property
    def plane_h(self) -> np.ndarray:
        return self.planes[..., H_PLANE, :, :]

    @property
    def plane_w(self) -> np.ndarray:
        return self.planes[..., W_PLANE, :, :]

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[-2:]


def forward_diff(a: np.ndarray, axis: int) -> np.ndarray:
    """Forward difference along ``axis`` with a zero trailing slice."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    src_hi = [slice(None)] * a.ndim
    src_lo = [slice(None)] * a.ndim
    src_hi[axis] = slice(1, n)
    src_lo[axis] = slice(0, n - 1)
    out[tuple(src_lo)] = a[tuple(src_hi)] - a[tuple(src_lo)]
    return out


def forward_diff_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`forward_diff`."""
    out = np.zeros_like(g)
    n = g.shape[axis]
    lo = [slice(None)] * g.ndim
    hi = [slice(None)] * g.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    out[tuple(lo)] -= g[tuple(lo)]
    out[tuple(hi)] += g[tuple(lo)]
    return out


def channel_diffs(a: np.ndarray) -> np.ndarray:
    """Signed forward differences of a (..., H, W, C) array -> (..., 2, H, W, C)."""
    return np.stack([forward_diff(a, -3), forward_diff(a, -2)], axis=-4)


def mean_abs_channel_edges(a: np.ndarray) -> np.ndarray:
    """Channel-mean of absolute differences; shared by RGB and soft-seg edges."""
    return np.abs(channel_diffs(a)).mean(axis=-1)


def rgb_edges(image) -> EdgeField:
    x = as_array(image)
    if x.shape[-1] not in (1, 3):
        raise ValueError(f"image needs 1 or 3 channels, got {x.shape[-1]}")
    return EdgeField(mean_abs_channel_edges(x))


def segprob_edges(probs) -> EdgeField:
    return EdgeField(mean_abs_channel_edges(as_array(probs)))


def normalized_inverse_depth(depth: np.ndarray) -> np.ndarray:
    eta = 1.0 / depth
    return eta / eta.mean(axis=(-2, -1), keepdims=True)


def depth_edges(depth) -> EdgeField:
    eta = normalized_inverse_depth(as_array(depth).astype(np.float64))
    # Rescaling a depth map changes eta only by float rounding noise; snapping
    # to single precision removes it, so c*d and d give identical edges.
    eta = eta.astype(np.float32).astype(np.float64)
    planes = np.stack([forward_diff(eta, -2), forward_diff(eta, -1)], axis=-3)
    return EdgeField(np.abs(planes))


def seglabel_edges(labels) -> EdgeField:
    m = as_array(labels).astype(np.int64)
    planes = np.stack([forward_diff(m, -2), forward_diff(m, -1)], axis=-3)
    return EdgeField((planes != 0).astype(np.float64), binary=True)


def binarize_edges(edges: EdgeField, top_fraction: float = 0.05) -> EdgeField:
    """Set values strictly above each plane's (1 - top_fraction) quantile to 1.

    An all-equal plane has no value above its quantile and maps to zeros.
    """
    if not 0.0 < top_fraction < 1.0:
        raise ValueError("top_fraction must lie in (0, 1)")
    if edges.binary:
        raise ValueError("edges are already binary")
    p = edges.planes
    q = np.quantile(p, 1.0 - top_fraction, axis=(-2, -1), keepdims=True)
    return EdgeField((p > q).astype(np.float64), binary=True)
