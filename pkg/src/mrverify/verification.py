"""IoU threshold policy and the similarity baselines it is compared against."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyUnion, FrameTooSmall, ZeroVariance, ZeroVector
from .imaging import Frame, Mask

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PIXEL_MAX = 255.0


class Metric(enum.Enum):
    IOU = "iou"
    PSNR = "psnr"
    SSIM = "ssim"
    NRMSE = "nrmse"
    NCC = "ncc"
    EMBEDDING_COSINE = "cosine"


@dataclass(frozen=True)
class VerificationPolicy:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"IoU threshold must lie in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class VerificationDecision:
    iou: float
    passed: bool
    chosen_index: int | None
    candidate_count: int
    threshold: float

    @property
    def iou_micro(self) -> int:
        return iou_to_micro(self.iou)


@dataclass(frozen=True)
class BaselineScore:
    metric: Metric
    value: float


def iou_to_micro(value: float) -> int:
    return int(math.floor(value * 1_000_000 + 0.5))


def _check_same_size(a, b):
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatch(f"{a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")


def iou(a: Mask, b: Mask) -> float:
    _check_same_size(a.bits, b.bits)
    inter, union = kernels.iou_counts(a.bits, b.bits)
    if union == 0:
        raise EmptyUnion("both masks are empty")
    return inter / union


def _candidate_masks(candidates) -> list[Mask]:
    out = []
    for c in candidates:
        out.append(c if isinstance(c, Mask) else c.mask)
    return out


def verify(reference: Mask, candidates: Iterable, policy: VerificationPolicy) -> VerificationDecision:
    """Pick the candidate with the highest IoU against the reference and apply the threshold.

    ``candidates`` may be a SegmentationOutput or any iterable of masks or
    candidates. The check passes only when the IoU strictly exceeds the
    threshold; ties between candidates go to the lowest index.
    """
    masks = _candidate_masks(candidates)
    for m in masks:
        _check_same_size(reference.bits, m.bits)
    best, best_idx = 0.0, None
    for k, m in enumerate(masks):
        v = iou(reference, m)
        if best_idx is None or v > best:
            best, best_idx = v, k
    return VerificationDecision(
        iou=best,
        passed=best > policy.threshold,
        chosen_index=best_idx,
        candidate_count=len(masks),
        threshold=policy.threshold,
    )


def _pixels(x) -> np.ndarray:
    return (x.pixels if isinstance(x, Frame) else np.asarray(x)).astype(np.float64)


def _luma(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.luma()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return arr


def _mse(a, b) -> float:
    pa, pb = _pixels(a), _pixels(b)
    _check_same_size(pa, pb)
    return float(np.mean((pa - pb) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all channels; ``inf`` for identical inputs."""
    mse = _mse(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PIXEL_MAX ** 2 / mse)


def nrmse(a, b) -> float:
    return math.sqrt(_mse(a, b)) / PIXEL_MAX


def _window_sums(x: np.ndarray, k: int) -> np.ndarray:
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    c[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def ssim(a, b) -> float:
    """Mean SSIM on luma over every 8x8 window (uniform weights, population moments)."""
    ya, yb = _luma(a), _luma(b)
    _check_same_size(ya, yb)
    k = SSIM_WINDOW
    if min(ya.shape) < k:
        raise FrameTooSmall(f"SSIM needs at least {k}x{k} pixels, got {ya.shape[1]}x{ya.shape[0]}")
    n = float(k * k)
    c1 = (SSIM_K1 * PIXEL_MAX) ** 2
    c2 = (SSIM_K2 * PIXEL_MAX) ** 2
    mu_a = _window_sums(ya, k) / n
    mu_b = _window_sums(yb, k) / n
    var_a = np.maximum(_window_sums(ya * ya, k) / n - mu_a ** 2, 0.0)
    var_b = np.maximum(_window_sums(yb * yb, k) / n - mu_b ** 2, 0.0)
    cov = _window_sums(ya * yb, k) / n - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def ncc(a, b) -> float:
    """Pearson correlation of the luma channels."""
    ya, yb = _luma(a), _luma(b)
    _check_same_size(ya, yb)
    da = ya - ya.mean()
    db = yb - yb.mean()
    na, nb = math.sqrt(float((da * da).sum())), math.sqrt(float((db * db).sum()))
    if na == 0.0 and nb == 0.0:
        raise ZeroVariance("both inputs are constant")
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def embedding_cosine(a, b) -> float:
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.shape != vb.shape or va.size == 0:
        raise DimensionMismatch(f"embedding lengths differ: {va.size} vs {vb.size}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("embedding has zero norm")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def stub_embedding(frame: Frame, bins: int = 4) -> np.ndarray:
    """Coarse joint color histogram, a deterministic stand-in for classifier outputs."""
    q = (frame.pixels.astype(np.int64) * bins) // 256
    idx = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    hist = np.bincount(idx.ravel(), minlength=bins ** 3).astype(np.float64)
    return hist / hist.sum()


def baseline_score(metric: Metric, reference: Frame, target: Frame, embed=stub_embedding) -> BaselineScore:
    if metric is Metric.PSNR:
        v = psnr(reference, target)
    elif metric is Metric.SSIM:
        v = ssim(reference, target)
    elif metric is Metric.NRMSE:
        v = nrmse(reference, target)
    elif metric is Metric.NCC:
        v = ncc(reference, target)
    elif metric is Metric.EMBEDDING_COSINE:
        v = embedding_cosine(embed(reference), embed(target))
    else:
        raise ValueError(f"{metric} is not a frame-similarity baseline")
    return BaselineScore(metric, v)
