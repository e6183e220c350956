"""Procedural (image, depth, segmentation) scenes.

A scene is a background plane (class 1) whose depth ramps from far at the top
to nearer at the bottom, overlaid with rectangles and ellipses of classes
2..|S|. Every shape is nearer than the background, overlaps are resolved by
nearest depth, and colors are class-correlated, so object boundaries show up
in all three modalities. Geometry is integer-driven and colors are quantized
to 8-bit levels, which keeps samples byte-identical across runs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arraycore import DepthMap, ImageTensor, SegLabelMap, make_rng

# seed offsets keep train/val/test disjoint for any split below 1e6 samples
SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}

_BASE_PALETTE = np.array(
    [
        [140, 150, 165],  # background
        [200, 60, 50],
        [60, 170, 70],
        [60, 80, 200],
        [220, 200, 60],
        [170, 70, 190],
        [60, 190, 190],
        [240, 140, 40],
    ],
    dtype=np.int64,
)


def class_palette(num_classes: int) -> np.ndarray:
    """8-bit base color per class (row k is class k+1)."""
    if num_classes <= len(_BASE_PALETTE):
        return _BASE_PALETTE[:num_classes].copy()
    extra = np.arange(len(_BASE_PALETTE), num_classes)
    more = np.stack([(extra * 67) % 200 + 30, (extra * 131) % 200 + 30, (extra * 29) % 200 + 30], axis=1)
    return np.concatenate([_BASE_PALETTE, more])


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 5
    num_shapes: int = 5
    depth_range: tuple[float, float] = (1.0, 50.0)
    texture: float = 0.02
    seed: int = 0
    class_depth: bool = True  # each object class occupies its own depth band

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0.1 <= lo < hi <= 100.0:
            raise ValueError("depth_range must be a sub-range of [0.1, 100]")
        if self.num_classes < 2 or self.height < 8 or self.width < 8 or self.num_shapes < 0:
            raise ValueError("invalid scene spec")


@dataclass(frozen=True)
class Sample:
    image: ImageTensor
    depth_gt: DepthMap
    labels_gt: SegLabelMap
    seed: int = 0

    def one_hot(self) -> np.ndarray:
        s = self.labels_gt.num_classes or int(self.labels_gt.data.max())
        return np.eye(s)[self.labels_gt.data - 1]


def generate_sample(spec: SceneSpec) -> Sample:
    rng = make_rng(spec.seed)
    h, w, s = spec.height, spec.width, spec.num_classes
    lo, hi = spec.depth_range
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    palette = class_palette(s)

    # background: far plane tilting towards the viewer at the bottom
    far = hi
    near = lo + 0.5 * (hi - lo)
    depth = np.broadcast_to(far + (near - far) * rows / (h - 1), (h, w)).astype(np.float64)
    labels = np.ones((h, w), dtype=np.int64)
    color = np.broadcast_to(palette[0], (h, w, 3)).astype(np.int64)
    color = color + (rows[..., None] * 30) // h - 15  # mild vertical shading

    shape_far = lo + 0.45 * (hi - lo)
    for _ in range(spec.num_shapes):
        cls = int(rng.integers(2, s + 1))
        cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
        ry = int(rng.integers(4, max(5, h // 4) + 1))
        rx = int(rng.integers(4, max(5, w // 4) + 1))
        if rng.integers(0, 2):
            mask = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
        else:
            mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        # depth quantized to quarter units; optional vertical slope
        if spec.class_depth:
            band = (shape_far - lo) / (s - 1)
            base = lo + (cls - 2) * band + 0.25 * int(rng.integers(0, int(band / 0.25) + 1))
        else:
            base = lo + 0.25 * int(rng.integers(0, int((shape_far - lo) / 0.25) + 1))
        slope = 0.25 * int(rng.integers(-4, 5))
        shape_depth = np.clip(base + slope * (rows - cy) / ry, lo, shape_far)
        shape_depth = np.broadcast_to(shape_depth, (h, w))
        jitter = rng.integers(-20, 21, size=3)
        take = mask & (shape_depth < depth)
        depth = np.where(take, shape_depth, depth)
        labels = np.where(take, cls, labels)
        color = np.where(take[..., None], palette[cls - 1] + jitter, color)

    amp = int(round(spec.texture * 255))
    if amp > 0:
        color = color + rng.integers(-amp, amp + 1, size=(h, w, 3))
    image = (np.clip(color, 0, 255).astype(np.float32) / np.float32(255))
    return Sample(
        image=ImageTensor(image),
        depth_gt=DepthMap(depth.astype(np.float32)),
        labels_gt=SegLabelMap(labels, num_classes=s),
        seed=spec.seed,
    )


def split_seeds(n: int, split: str = "train", base_seed: int = 0) -> list[int]:
    return [base_seed + SPLIT_OFFSETS[split] + k for k in range(n)]


def generate_split(spec: SceneSpec, n: int, split: str = "train") -> list[Sample]:
    """``n`` samples from sequential seeds in the seed range of ``split``.

    ``spec.seed`` acts as a base seed shifted by the split's offset.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return [generate_sample(replace(spec, seed=sd)) for sd in split_seeds(n, split, spec.seed)]


def stack_split(samples: list[Sample]):
    """Batch arrays (images, depths, labels) for a list of samples."""
    images = np.stack([smp.image.data for smp in samples])
    depths = np.stack([smp.depth_gt.data for smp in samples])
    labels = np.stack([smp.labels_gt.data for smp in samples])
    return images, depths, labels
