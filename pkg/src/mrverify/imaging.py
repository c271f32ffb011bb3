"""Raster types, crop/scale transforms, binary-layer filtering and frame codecs.

Frames are RGB8, row-major, top-left origin. Pixel ``(i, j)`` means column
``i``, row ``j``; the backing array is indexed ``pixels[j, i]``.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import CorruptStream, InvalidAlpha, InvalidRaster, RegionOutOfBounds


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


class Frame:
    """Immutable RGB8 raster."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidRaster(f"frame must have shape (h, w, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRaster("frame must be at least 1x1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise InvalidRaster("pixel values must fit in 8 bits")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(arr))

    def __setattr__(self, name, value):
        raise AttributeError("Frame is immutable")

    def __reduce__(self):
        return Frame, (self.pixels,)

    @classmethod
    def from_rgb(cls, width: int, height: int, data) -> Frame:
        """Build from a row-major buffer of ``width*height`` RGB triples."""
        flat = np.frombuffer(bytes(data), dtype=np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) \
            else np.asarray(data, dtype=np.uint8).reshape(-1)
        if flat.size != width * height * 3:
            raise InvalidRaster(f"expected {width * height * 3} bytes, got {flat.size}")
        return cls(flat.reshape(height, width, 3))

    @classmethod
    def blank(cls, width: int, height: int, color=(0, 0, 0)) -> Frame:
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = color
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def to_bytes(self) -> bytes:
        return self.pixels.tobytes()

    def luma(self) -> np.ndarray:
        """ITU-R BT.601 luma as float64."""
        p = self.pixels.astype(np.float64)
        return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Frame({self.width}x{self.height})"


class Mask:
    """Immutable binary raster, one byte (0 or 1) per pixel."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRaster(f"mask must be a non-empty 2-D raster, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        elif arr.size and not np.isin(arr, (0, 1)).all():
            raise InvalidRaster("mask elements must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(arr.astype(np.uint8, copy=False)))

    def __setattr__(self, name, value):
        raise AttributeError("Mask is immutable")

    def __reduce__(self):
        return Mask, (self.bits,)

    @classmethod
    def from_nonzero(cls, arr) -> Mask:
        return cls(np.asarray(arr) != 0)

    @classmethod
    def zeros(cls, width: int, height: int) -> Mask:
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def bbox(self) -> Region | None:
        """Tight bounding box of the set bits, or None for an empty mask."""
        ys, xs = np.nonzero(self.bits)
        if xs.size == 0:
            return None
        x0, y0 = int(xs.min()), int(ys.min())
        return Region(x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    def __repr__(self):
        return f"Mask({self.width}x{self.height}, set={self.count()})"


@dataclass(frozen=True)
class Region:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise RegionOutOfBounds(f"region must be at least 1x1: {self}")
        if self.x < 0 or self.y < 0:
            raise RegionOutOfBounds(f"region origin must be non-negative: {self}")

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def within(self, outer: Region) -> Region:
        """Express this region (relative to ``outer``) in ``outer``'s parent coordinates."""
        return Region(outer.x + self.x, outer.y + self.y, self.w, self.h)


class CodecKind(enum.Enum):
    LOSSLESS = "lossless"
    LOSSY = "lossy"


@dataclass(frozen=True)
class CodecSpec:
    kind: CodecKind
    quality: int | None = None

    def __post_init__(self):
        if self.kind is CodecKind.LOSSY:
            if self.quality is None or not 1 <= int(self.quality) <= 100:
                raise ValueError(f"lossy quality must be in 1..100, got {self.quality}")
        elif self.quality is not None:
            raise ValueError("lossless codec takes no quality")

    @classmethod
    def lossless(cls) -> CodecSpec:
        return cls(CodecKind.LOSSLESS)

    @classmethod
    def lossy(cls, quality: int = 80) -> CodecSpec:
        return cls(CodecKind.LOSSY, int(quality))

    @classmethod
    def parse(cls, text: str) -> CodecSpec:
        """Accepts ``lossless``/``png`` or ``lossy[:Q]``/``jpeg[:Q]``."""
        name, _, q = text.strip().lower().partition(":")
        if name in ("lossless", "png"):
            if q:
                raise ValueError("lossless codec takes no quality")
            return cls.lossless()
        if name in ("lossy", "jpeg", "jpg"):
            return cls.lossy(int(q) if q else 80)
        raise ValueError(f"unknown codec {text!r}")

    def to_wire(self) -> int:
        return 0 if self.kind is CodecKind.LOSSLESS else int(self.quality)

    @classmethod
    def from_wire(cls, code: int) -> CodecSpec:
        return cls.lossless() if code == 0 else cls.lossy(code)

    def __str__(self):
        return "lossless" if self.kind is CodecKind.LOSSLESS else f"lossy:{self.quality}"


def crop(frame: Frame, region: Region) -> Frame:
    if not region.fits(frame.width, frame.height):
        raise RegionOutOfBounds(f"{region} exceeds {frame.width}x{frame.height} frame")
    return Frame(frame.pixels[region.y:region.y + region.h, region.x:region.x + region.w])


def crop_mask(mask: Mask, region: Region) -> Mask:
    if not region.fits(mask.width, mask.height):
        raise RegionOutOfBounds(f"{region} exceeds {mask.width}x{mask.height} mask")
    return Mask(mask.bits[region.y:region.y + region.h, region.x:region.x + region.w])


def scaled_size(width: int, height: int, alpha: float) -> tuple[int, int]:
    """Output dimensions for a scale factor: floor per axis, at least 1."""
    check_alpha(alpha)
    # the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(alpha * width + 1e-9)), max(1, math.floor(alpha * height + 1e-9))


def check_alpha(alpha: float) -> float:
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha)) or not 0 < alpha <= 1:
        raise InvalidAlpha(f"alpha must lie in (0, 1], got {alpha!r}")
    return float(alpha)


def resize_matrix(src_w: int, src_h: int, dst_w: int, dst_h: int) -> np.ndarray:
    """Inverse map from destination pixel centres to source pixel centres."""
    sx = src_w / dst_w
    sy = src_h / dst_h
    return np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5], [0.0, 0.0, 1.0]])


def resize(frame: Frame, width: int, height: int) -> Frame:
    if (width, height) == frame.size:
        return frame
    m = resize_matrix(frame.width, frame.height, width, height)
    return Frame(kernels.warp_bilinear(frame.pixels, m, height, width))


def resize_mask(mask: Mask, width: int, height: int) -> Mask:
    if (width, height) == mask.size:
        return mask
    m = resize_matrix(mask.width, mask.height, width, height)
    return Mask(kernels.warp_nearest(mask.bits, m, height, width))


def scale(frame: Frame, alpha: float) -> Frame:
    """Bilinear downscale by ``alpha`` in (0, 1]."""
    return resize(frame, *scaled_size(frame.width, frame.height, alpha))


def scale_mask(mask: Mask, alpha: float) -> Mask:
    return resize_mask(mask, *scaled_size(mask.width, mask.height, alpha))


def binary_filter(layer: Frame) -> Mask:
    """Set bit wherever any channel of the layer is non-zero."""
    return Mask(layer.pixels.any(axis=2))


def encode(frame: Frame, codec: CodecSpec) -> bytes:
    img = Image.fromarray(frame.pixels, "RGB")
    buf = io.BytesIO()
    if codec.kind is CodecKind.LOSSLESS:
        img.save(buf, format="PNG", compress_level=6)
    else:
        img.save(buf, format="JPEG", quality=codec.quality)
    return buf.getvalue()


def decode(data: bytes) -> Frame:
    if not data:
        raise CorruptStream("empty stream")
    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.format not in ("PNG", "JPEG"):
                raise CorruptStream(f"unsupported container {img.format}")
            img.load()
            return Frame(np.asarray(img.convert("RGB")))
    except CorruptStream:
        raise
    except Exception as exc:  # Pillow raises a zoo of types on bad input
        raise CorruptStream(str(exc) or type(exc).__name__) from exc


def save_frame(frame: Frame, path) -> None:
    Image.fromarray(frame.pixels, "RGB").save(Path(path), format="PNG")


def load_frame(path) -> Frame:
    with Image.open(Path(path)) as img:
        return Frame(np.asarray(img.convert("RGB")))


def save_mask(mask: Mask, path) -> None:
    """Single-channel PNG, 0/255."""
    Image.fromarray(mask.bits * np.uint8(255), "L").save(Path(path), format="PNG")


def load_mask(path) -> Mask:
    with Image.open(Path(path)) as img:
        return Mask.from_nonzero(np.asarray(img.convert("L")))
