"""Array containers, seeded RNG and file I/O.

Containers are thin immutable wrappers around numpy arrays. Operations in the
rest of the package accept either a container or a bare ``ndarray`` so that
batched code paths never have to wrap and unwrap.

Flat-array file layout (little-endian)::

    b"EGARRAY1"                      8 bytes magic
    u32 ndim, u32 dim0..dim3         unused dims are 0
    u32 dtype code                   0=u8, 1=f32, 2=f64, 3=u16 labels
    payload                          row-major

Label maps are 1-based in memory and stored 0-based on disk.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"EGARRAY1"
_HEADER = struct.Struct("<8s6I")

DTYPE_CODES = {0: np.dtype("<u1"), 1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<u2")}
_CODE_OF = {np.dtype("u1"): 0, np.dtype("f4"): 1, np.dtype("f8"): 2, np.dtype("u2"): 3}

DEPTH_MIN = 0.1
DEPTH_MAX = 100.0


class ArrayFormatError(ValueError):
    """Malformed flat-array header."""


class ShapeError(ValueError):
    """Shape or dtype does not match the requested container."""


class RangeError(ValueError):
    """Values violate a container's range invariant."""


class NetpbmError(ValueError):
    """Unsupported or malformed PPM/PGM file."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


def _float(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = _float(self.data)
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ShapeError(f"image must be HxWx1 or HxWx3, got {a.shape}")
        if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0:
            raise RangeError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(a))

    height = property(lambda self: self.data.shape[0])
    width = property(lambda self: self.data.shape[1])
    channels = property(lambda self: self.data.shape[2])


@dataclass(frozen=True)
class DepthMap:
    """H x W depth map with values in [0.1, 100]."""

    data: np.ndarray

    def __post_init__(self):
        a = _float(self.data)
        if a.ndim != 2:
            raise ShapeError(f"depth map must be 2-D, got {a.shape}")
        # f32 storage rounds the range endpoints, so compare with a small slack
        lo, hi = DEPTH_MIN * (1 - 1e-6), DEPTH_MAX * (1 + 1e-6)
        if not np.all(np.isfinite(a)) or a.min() < lo or a.max() > hi:
            raise RangeError(f"depth values must lie in [{DEPTH_MIN}, {DEPTH_MAX}]")
        object.__setattr__(self, "data", _frozen(a))

    height = property(lambda self: self.data.shape[0])
    width = property(lambda self: self.data.shape[1])


@dataclass(frozen=True)
class SegProbMap:
    """H x W x |S| class probabilities, normalized per pixel."""

    data: np.ndarray

    def __post_init__(self):
        a = _float(self.data)
        if a.ndim != 3 or a.shape[2] < 1:
            raise ShapeError(f"probability map must be HxWxS, got {a.shape}")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise RangeError("probabilities must lie in [0, 1]")
        if np.abs(a.sum(axis=2) - 1.0).max() > 1e-5:
            raise RangeError("per-pixel class probabilities must sum to 1")
        object.__setattr__(self, "data", _frozen(a))

    height = property(lambda self: self.data.shape[0])
    width = property(lambda self: self.data.shape[1])
    num_classes = property(lambda self: self.data.shape[2])


@dataclass(frozen=True)
class SegLabelMap:
    """H x W integer class ids in {1, ..., num_classes}."""

    data: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got {a.shape}")
        if not np.issubdtype(a.dtype, np.integer):
            raise ShapeError(f"labels must be integers, got {a.dtype}")
        a = a.astype(np.int64)
        if a.size and a.min() < 1:
            raise RangeError("class ids are 1-based")
        if self.num_classes is not None and a.size and a.max() > self.num_classes:
            raise RangeError(f"class id above num_classes={self.num_classes}")
        object.__setattr__(self, "data", _frozen(a))

    height = property(lambda self: self.data.shape[0])
    width = property(lambda self: self.data.shape[1])


Container = Union[ImageTensor, DepthMap, SegProbMap, SegLabelMap]


def as_array(x) -> np.ndarray:
    """Return the ndarray behind a container, or ``x`` itself as an array."""
    return np.asarray(getattr(x, "data", x))


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


def argmax_labels(probs) -> SegLabelMap:
    """Per-pixel argmax as 1-based labels; ties go to the lowest class id."""
    p = as_array(probs)
    # np.argmax returns the first maximal index
    return SegLabelMap(np.argmax(p, axis=-1) + 1, num_classes=p.shape[-1])


# ---------------------------------------------------------------------------
# flat-array container


def write_raw(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.ndim > 4:
        raise ShapeError("flat-array format holds at most 4 dims")
    code = _CODE_OF.get(a.dtype.newbyteorder("="))
    if code is None:
        raise ShapeError(f"unsupported dtype {a.dtype}")
    dims = list(a.shape) + [0] * (4 - a.ndim)
    header = _HEADER.pack(MAGIC, a.ndim, *dims, code)
    payload = np.ascontiguousarray(a, dtype=DTYPE_CODES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_raw(path) -> np.ndarray:
    """Read a flat-array file into an ndarray (no container semantics)."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ArrayFormatError("file shorter than header")
    magic, ndim, d0, d1, d2, d3, code = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ArrayFormatError(f"bad magic {magic!r}")
    if ndim > 4:
        raise ArrayFormatError(f"ndim {ndim} > 4")
    if code not in DTYPE_CODES:
        raise ArrayFormatError(f"unknown dtype code {code}")
    dims = (d0, d1, d2, d3)
    if any(d != 0 for d in dims[ndim:]):
        raise ArrayFormatError("nonzero unused dims")
    shape = dims[:ndim]
    dtype = DTYPE_CODES[code]
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) - _HEADER.size != n * dtype.itemsize:
        raise ShapeError(f"payload size does not match shape {shape} and dtype {dtype}")
    out = np.frombuffer(buf, dtype=dtype, count=n, offset=_HEADER.size).reshape(shape)
    return out.astype(dtype.newbyteorder("="))


def save_array(obj, path) -> None:
    """Write a container (or a bare array) in the flat-array format."""
    if isinstance(obj, SegLabelMap):
        write_raw(path, (obj.data - 1).astype(np.uint16))
    else:
        write_raw(path, as_array(obj))


def _infer_kind(a: np.ndarray) -> str:
    if a.dtype == np.uint16:
        return "labels"
    if a.ndim == 2:
        return "depth"
    if a.ndim == 3 and a.shape[2] in (1, 3):
        return "image"
    if a.ndim == 3:
        return "probs"
    raise ShapeError(f"cannot infer container kind for shape {a.shape}")


def load_array(path, kind: str | None = None) -> Container:
    """Load a typed container from a flat-array file.

    ``kind`` is one of ``image``, ``depth``, ``probs``, ``labels``. When
    omitted it is inferred from dtype and shape; a 3-channel probability map
    is indistinguishable from an RGB image, so pass ``kind="probs"`` there.
    """
    a = read_raw(path)
    kind = kind or _infer_kind(a)
    if kind == "labels":
        if a.dtype != np.uint16:
            raise ShapeError(f"labels must be stored as u16, got {a.dtype}")
        return SegLabelMap(a.astype(np.int64) + 1)
    if a.dtype == np.uint16:
        raise ShapeError(f"u16 payload cannot be loaded as {kind}")
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / np.float32(255)
    ctor = {"image": ImageTensor, "depth": DepthMap, "probs": SegProbMap}.get(kind)
    if ctor is None:
        raise ValueError(f"unknown container kind {kind!r}")
    return ctor(a)


# ---------------------------------------------------------------------------
# binary PPM / PGM


def _netpbm_header(buf: bytes):
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        fields.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    return fields, pos + 1


def load_ppm(path) -> ImageTensor:
    buf = Path(path).read_bytes()
    fields, offset = _netpbm_header(buf)
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}; only P5/P6")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as e:
        raise NetpbmError("non-integer header field") from e
    if maxval != 255:
        raise NetpbmError(f"maxval must be 255, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    raster = buf[offset : offset + n]
    if len(raster) != n:
        raise NetpbmError("truncated raster")
    a = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return ImageTensor(a.astype(np.float32) / np.float32(255))


def save_ppm(image, path) -> None:
    """Write P6 (3 channels) or P5 (1 channel), quantizing by round(v*255)."""
    a = as_array(image)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    if c not in (1, 3):
        raise ShapeError(f"PPM/PGM needs 1 or 3 channels, got {c}")
    q = np.clip(np.rint(a.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + q.tobytes())
