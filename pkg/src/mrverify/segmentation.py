"""Reference-mask extraction and pluggable target segmenters.

Two segmenters are provided: ``OracleSegmenter`` replays ground-truth
instance labels through a seeded degradation model, and
``ExternalSegmenter`` shells out to a user-supplied model process that
exchanges masks as PNG files plus a JSON index.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from . import kernels
from .errors import EmptyReferenceMask, InvalidRaster, SegmenterFailure, UnknownFrame
from .imaging import Frame, Mask, Region, binary_filter, load_mask, resize_mask, save_frame, save_mask


@dataclass(frozen=True)
class InstanceLabel:
    class_id: int
    mask: Mask
    bbox: Region = None

    def __post_init__(self):
        tight = self.mask.bbox()
        if tight is None:
            raise InvalidRaster("instance mask is empty")
        if self.bbox is None:
            object.__setattr__(self, "bbox", tight)
        elif self.bbox != tight:
            raise InvalidRaster(f"bbox {self.bbox} is not the tight box {tight}")


class Candidate(NamedTuple):
    class_id: int
    mask: Mask
    confidence: float = 1.0


@dataclass(frozen=True)
class SegmentationOutput:
    candidates: tuple[Candidate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        sizes = {c.mask.size for c in self.candidates}
        if len(sizes) > 1:
            raise InvalidRaster(f"candidate masks disagree on dimensions: {sorted(sizes)}")

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    @property
    def masks(self) -> list[Mask]:
        return [c.mask for c in self.candidates]


@dataclass(frozen=True)
class PerturbationSpec:
    dilate_erode_radius: int = 0
    jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_rate", "spurious_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")

    @property
    def is_identity(self) -> bool:
        return (self.dilate_erode_radius == 0 and self.jitter_sigma == 0
                and self.miss_rate == 0 and self.spurious_rate == 0)

    @classmethod
    def parse(cls, text: str) -> PerturbationSpec:
        """``radius=2,jitter=2,miss=0.05,spurious=0,seed=1`` (any subset)."""
        aliases = {"radius": "dilate_erode_radius", "jitter": "jitter_sigma",
                   "miss": "miss_rate", "spurious": "spurious_rate", "seed": "seed"}
        kwargs = {}
        for item in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = item.partition("=")
            key = aliases.get(key.strip(), key.strip())
            if not sep or key not in aliases.values():
                raise ValueError(f"bad perturbation item {item!r}")
            kwargs[key] = int(value) if key in ("dilate_erode_radius", "seed") else float(value)
        return cls(**kwargs)


def extract_reference_mask(virtual_layer: Frame) -> Mask:
    mask = binary_filter(virtual_layer)
    if mask.count() == 0:
        raise EmptyReferenceMask("virtual layer has no rendered pixels")
    return mask


def dilate(mask: Mask, radius: int) -> Mask:
    return Mask(kernels.morph_cross(mask.bits, radius, True))


def erode(mask: Mask, radius: int) -> Mask:
    return Mask(kernels.morph_cross(mask.bits, radius, False))


def frame_key_seed(key) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    return zlib.crc32(repr(key).encode())


def translate_bits(bits: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(bits)
    h, w = bits.shape
    ys, xs = np.nonzero(bits)
    xs, ys = xs + dx, ys + dy
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out[ys[keep], xs[keep]] = 1
    return out


def perturb(label_mask: Mask, spec: PerturbationSpec, instance_index: int, frame_key=0) -> Mask | None:
    """Degrade a ground-truth mask: drop it, grow/shrink it, then nudge it.

    Deterministic for a fixed ``(spec.seed, frame_key, instance_index)``.
    Returns None when the instance is missed or erodes away.
    """
    rng = np.random.default_rng([int(spec.seed), frame_key_seed(frame_key), int(instance_index)])
    missed = rng.random() < spec.miss_rate
    jx, jy = rng.normal(0.0, 1.0, size=2) * spec.jitter_sigma
    if missed:
        return None
    bits = label_mask.bits
    r = spec.dilate_erode_radius
    if r > 0:
        bits = kernels.morph_cross(bits, r, True)
    elif r < 0:
        bits = kernels.morph_cross(bits, -r, False)
    ys, xs = np.nonzero(bits)
    if xs.size == 0:
        return None
    dx, dy = int(np.rint(jx)), int(np.rint(jy))
    if dx or dy:
        h, w = bits.shape
        dx = min(max(dx, -int(xs.min())), w - 1 - int(xs.max()))
        dy = min(max(dy, -int(ys.min())), h - 1 - int(ys.max()))
        bits = translate_bits(bits, dx, dy)
    return Mask(bits)


class Segmenter(Protocol):
    def segment(self, frame_id, step_class: int, frame: Frame | None = None) -> SegmentationOutput: ...


def segment(frame_id, step_class: int, segmenter: Segmenter, frame: Frame | None = None) -> SegmentationOutput:
    """Candidates of ``step_class`` only; an empty output means the object is absent."""
    out = segmenter.segment(frame_id, step_class, frame)
    return SegmentationOutput([c for c in out.candidates if c.class_id == step_class])


class OracleSegmenter:
    """Ground-truth labels, optionally degraded, standing in for a trained model.

    ``labels`` maps a frame key to its instance labels. When a query frame is
    given, masks are first resampled (nearest) to its size and then degraded,
    so perturbation radii and jitter are in query-frame pixels.
    """

    def __init__(self, labels: Mapping, perturbation: PerturbationSpec | None = None):
        self.labels = labels
        self.perturbation = perturbation or PerturbationSpec()

    def _labels(self, frame_id) -> Sequence[InstanceLabel]:
        try:
            return self.labels[frame_id]
        except KeyError:
            raise UnknownFrame(f"no ground truth for frame {frame_id!r}") from None

    def segment(self, frame_id, step_class: int, frame: Frame | None = None) -> SegmentationOutput:
        labels = self._labels(frame_id)
        spec = self.perturbation
        out = []
        for k, inst in enumerate(labels):
            if inst.class_id != step_class:
                continue
            mask = inst.mask
            if frame is not None:
                mask = resize_mask(mask, frame.width, frame.height)
            if not spec.is_identity:
                # errors are in pixels of the frame actually segmented
                mask = perturb(mask, spec, k, frame_id)
            if mask is None:
                continue
            out.append(Candidate(inst.class_id, mask, 1.0))
        if spec.spurious_rate > 0 and labels:
            fake = self._spurious(frame_id, step_class, labels, frame)
            if fake is not None:
                out.append(fake)
        return SegmentationOutput(out)

    def _spurious(self, frame_id, step_class, labels, frame=None) -> Candidate | None:
        rng = np.random.default_rng([int(self.perturbation.seed), frame_key_seed(frame_id), 1 << 20])
        if rng.random() >= self.perturbation.spurious_rate:
            return None
        ref = labels[int(rng.integers(len(labels)))]
        h, w = ref.mask.height, ref.mask.width
        bw, bh = ref.bbox.w, ref.bbox.h
        if frame is not None and frame.size != (w, h):
            bw = max(1, min(frame.width, round(bw * frame.width / w)))
            bh = max(1, min(frame.height, round(bh * frame.height / h)))
            w, h = frame.size
        x = int(rng.integers(0, w - bw + 1))
        y = int(rng.integers(0, h - bh + 1))
        bits = np.zeros((h, w), dtype=np.uint8)
        bits[y:y + bh, x:x + bw] = 1
        return Candidate(step_class, Mask(bits), 0.5)


def write_mask_index(directory, candidates: Sequence[Candidate]) -> Path:
    """Write candidates in the adapter exchange format; returns the index path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, c in enumerate(candidates):
        name = f"mask_{k:03d}.png"
        save_mask(c.mask, directory / name)
        entries.append({"class_id": int(c.class_id), "confidence": float(c.confidence), "file": name})
    index = directory / "index.json"
    index.write_text(json.dumps(entries, indent=1))
    return index


def read_mask_index(directory, expected_size: tuple[int, int] | None = None) -> list[Candidate]:
    directory = Path(directory)
    try:
        entries = json.loads((directory / "index.json").read_text())
        out = []
        for e in entries:
            mask = load_mask(directory / e["file"])
            if expected_size is not None and mask.size != tuple(expected_size):
                raise SegmenterFailure(f"mask {e['file']} is {mask.size}, expected {expected_size}")
            out.append(Candidate(int(e["class_id"]), mask, float(e.get("confidence", 1.0))))
        return out
    except SegmenterFailure:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SegmenterFailure(f"unreadable mask index in {directory}: {exc}") from exc


@dataclass
class ExternalSegmenter:
    """Runs ``command frame.png step_class out_dir`` per query.

    The process must leave ``out_dir/index.json`` plus one single-channel 0/255
    PNG per candidate, sized like the query frame. Queries are serialized.
    """

    command: Sequence[str]
    timeout: float = 30.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def segment(self, frame_id, step_class: int, frame: Frame | None = None) -> SegmentationOutput:
        if frame is None:
            raise SegmenterFailure("external segmenter needs the query frame")
        with self._lock, tempfile.TemporaryDirectory(prefix="mrverify-seg-") as tmp:
            tmp = Path(tmp)
            frame_path = tmp / "frame.png"
            out_dir = tmp / "out"
            out_dir.mkdir()
            save_frame(frame, frame_path)
            try:
                proc = subprocess.run(
                    [*self.command, str(frame_path), str(step_class), str(out_dir)],
                    capture_output=True, timeout=self.timeout, check=False,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise SegmenterFailure(f"segmenter process failed: {exc}") from exc
            if proc.returncode != 0:
                raise SegmenterFailure(
                    f"segmenter exited with {proc.returncode}: {proc.stderr.decode(errors='replace')[-500:]}"
                )
            return SegmentationOutput(read_mask_index(out_dir, frame.size))
