"""Shared-encoder depth + segmentation network with analytic backprop.

Layout (NHWC, float64)::

    x -> conv3x3(3->16) -> ReLU -> conv3x3(16->16) -> ReLU -> h
    h -> conv1x1(16->|S|) -> softmax                      (segmentation)
    h -> conv1x1(16->1) -> sigmoid -> 1 / (a*sigma + b)   (depth)

Convolutions are stride 1 with zero "same" padding.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

DEPTH_A = 9.99
DEPTH_B = 0.01
HIDDEN = 16


@dataclass
class ToyNetParams:
    conv1_w: np.ndarray  # (3, 3, C, 16)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (3, 3, 16, 16)
    conv2_b: np.ndarray
    seg_w: np.ndarray  # (16, S)
    seg_b: np.ndarray
    depth_w: np.ndarray  # (16,)
    depth_b: np.ndarray  # (1,)

    ENCODER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")

    @property
    def num_classes(self) -> int:
        return self.seg_w.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ToyNetParams":
        return ToyNetParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "ToyNetParams":
        return ToyNetParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> "ToyNetParams":
        out, pos = {}, 0
        for k, v in self.arrays().items():
            out[k] = np.asarray(vec[pos : pos + v.size], dtype=np.float64).reshape(v.shape)
            pos += v.size
        return ToyNetParams(**out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


def init_params(num_classes: int = 5, rng: np.random.Generator | None = None, in_channels: int = 3) -> ToyNetParams:
    """He-normal convolutions, small heads, zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return ToyNetParams(
        conv1_w=rng.normal(0, np.sqrt(2 / (9 * in_channels)), (3, 3, in_channels, HIDDEN)),
        conv1_b=np.zeros(HIDDEN),
        conv2_w=rng.normal(0, np.sqrt(2 / (9 * HIDDEN)), (3, 3, HIDDEN, HIDDEN)),
        conv2_b=np.zeros(HIDDEN),
        seg_w=rng.normal(0, np.sqrt(1 / HIDDEN), (HIDDEN, num_classes)),
        seg_b=np.zeros(num_classes),
        depth_w=rng.normal(0, np.sqrt(1 / HIDDEN), HIDDEN),
        depth_b=np.zeros(1),
    )


# ---------------------------------------------------------------------------
# 3x3 convolution


def _padded_rows(x: np.ndarray) -> np.ndarray:
    """Zero-pad by one pixel and flatten to (N*(H+2)*(W+2), C) rows."""
    n, h, wd, c = x.shape
    xp = np.zeros((n, h + 2, wd + 2, c), dtype=np.result_type(x, np.float64))
    xp[:, 1:-1, 1:-1] = x
    return xp.reshape(-1, c)


def _taps(h: int, wd: int, rows: int):
    """Row offset of each 3x3 tap in the padded layout, and the usable row count.

    Output pixel (i, j) sits at flat row i*(W+2) + j; tap (dy, dx) reads the
    padded row dy*(W+2) + dx further on, so every tap is one contiguous slice.
    """
    span = 2 * (wd + 2) + 2
    return [(dy, dx, dy * (wd + 2) + dx) for dy in range(3) for dx in range(3)], rows - span


def conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, h, wd, _ = x.shape
    co = w.shape[3]
    rows = _padded_rows(x)
    taps, m = _taps(h, wd, len(rows))
    acc = np.zeros((len(rows), co))
    for dy, dx, off in taps:
        acc[:m] += rows[off : off + m] @ w[dy, dx]
    return acc.reshape(n, h + 2, wd + 2, co)[:, :h, :wd]


def conv3x3_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    # correlation with the spatially flipped, channel-transposed kernel
    return conv3x3(dout, np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2)))


def conv3x3_weight_grad(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    n, h, wd, ci = x.shape
    co = dout.shape[3]
    rows = _padded_rows(x)
    taps, m = _taps(h, wd, len(rows))
    # dout in the same flat layout; the padding rows carry zero gradient
    d = np.zeros((n, h + 2, wd + 2, co))
    d[:, :h, :wd] = dout
    d = d.reshape(-1, co)[:m]
    g = np.empty((3, 3, ci, co))
    for dy, dx, off in taps:
        g[dy, dx] = rows[off : off + m].T @ d
    return g


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Activations:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    sigma: np.ndarray
    depth: np.ndarray


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def decode_depth(sigma: np.ndarray) -> np.ndarray:
    return 1.0 / (DEPTH_A * sigma + DEPTH_B)


def forward(params: ToyNetParams, images) -> Activations:
    """Run both heads on a batch (N, H, W, C) or a single (H, W, C) image.

    Single images are promoted to a batch of one; outputs keep the batch axis.
    """
    x = np.asarray(getattr(images, "data", images), dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    h1 = np.maximum(conv3x3(x, params.conv1_w) + params.conv1_b, 0.0)
    h2 = np.maximum(conv3x3(h1, params.conv2_w) + params.conv2_b, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        logits = h2 @ params.seg_w + params.seg_b
        zd = h2 @ params.depth_w + params.depth_b[0]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(zd))):
        raise FloatingPointError("non-finite activations in forward pass")
    sigma = sigmoid(zd)
    return Activations(x, h1, h2, logits, softmax(logits), sigma, decode_depth(sigma))


def probs_to_logits_grad(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Backprop a gradient on softmax outputs to the logits."""
    return probs * (d_probs - (probs * d_probs).sum(axis=-1, keepdims=True))


def head_backward(params: ToyNetParams, act: Activations, d_logits, d_sigma):
    """Gradients of the head parameters and of the shared features ``h``."""
    grads = {}
    dh = np.zeros_like(act.h2)
    h_flat = act.h2.reshape(-1, act.h2.shape[-1])
    if d_logits is not None:
        dl = d_logits.reshape(-1, d_logits.shape[-1])
        grads["seg_w"] = h_flat.T @ dl
        grads["seg_b"] = dl.sum(axis=0)
        dh += d_logits @ params.seg_w.T
    if d_sigma is not None:
        dz = d_sigma * act.sigma * (1.0 - act.sigma)
        grads["depth_w"] = h_flat.T @ dz.ravel()
        grads["depth_b"] = np.array([dz.sum()])
        dh += dz[..., None] * params.depth_w
    return grads, dh


def encoder_backward(params: ToyNetParams, act: Activations, dh2, want_params=True, want_input=False):
    grads = {}
    dz2 = dh2 * (act.h2 > 0)
    if want_params:
        grads["conv2_w"] = conv3x3_weight_grad(act.h1, dz2)
        grads["conv2_b"] = dz2.sum(axis=(0, 1, 2))
    dz1 = conv3x3_input_grad(dz2, params.conv2_w) * (act.h1 > 0)
    if want_params:
        grads["conv1_w"] = conv3x3_weight_grad(act.x, dz1)
        grads["conv1_b"] = dz1.sum(axis=(0, 1, 2))
    dx = conv3x3_input_grad(dz1, params.conv1_w) if want_input else None
    return grads, dx


def predict(params: ToyNetParams, images, batch_size: int = 4):
    """Depth maps and 1-based label maps for a batch, computed in chunks."""
    x = np.asarray(getattr(images, "data", images))
    if x.ndim == 3:
        x = x[None]
    depths, labels = [], []
    for start in range(0, len(x), batch_size):
        act = forward(params, x[start : start + batch_size])
        depths.append(act.depth)
        labels.append(np.argmax(act.probs, axis=-1) + 1)
    return np.concatenate(depths), np.concatenate(labels)
