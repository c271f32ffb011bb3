"""The per-pair processing chain, shared by offline evaluation and the edge server.

Client side: crop, scale by alpha, encode. Server side: decode, align the
target to the reference, take the reference mask from the virtual layer,
segment the target for the step class, verify. Running both halves
in-process gives the offline decision; the server runs the second half on
bytes received over the wire, so the two agree exactly.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Point2, align_target
from .imaging import CodecSpec, Frame, Region, check_alpha, crop, decode, encode, scale, scaled_size
from .metrics import EvaluationReport, evaluate_scores
from .segmentation import OracleSegmenter, PerturbationSpec, extract_reference_mask, segment
from .verification import (
    Metric,
    VerificationDecision,
    VerificationPolicy,
    baseline_score,
    verify,
)

log = logging.getLogger(__name__)

METHODS = tuple(m.value for m in Metric)


@dataclass(frozen=True)
class ClientSettings:
    alpha: float = 0.5
    codec: CodecSpec = field(default_factory=CodecSpec.lossless)
    crop: Region | None = None

    def __post_init__(self):
        check_alpha(self.alpha)


class PreparedFrame(NamedTuple):
    payload: bytes
    size: tuple[int, int]
    preproc_s: float
    encode_s: float


def prepare_frame(frame: Frame, settings: ClientSettings, codec: CodecSpec | None = None) -> PreparedFrame:
    """Crop, downscale and encode one frame, timing the two halves."""
    t0 = time.perf_counter()
    if settings.crop is not None:
        frame = crop(frame, settings.crop)
    small = scale(frame, settings.alpha)
    t1 = time.perf_counter()
    payload = encode(small, codec or settings.codec)
    t2 = time.perf_counter()
    return PreparedFrame(payload, small.size, t1 - t0, t2 - t1)


def transform_points(points: Sequence, frame_size: tuple[int, int], settings: ClientSettings) -> list[Point2]:
    """Map full-frame pixel coordinates into the cropped, scaled frame."""
    w, h = frame_size
    ox, oy = 0, 0
    if settings.crop is not None:
        ox, oy, w, h = settings.crop.x, settings.crop.y, settings.crop.w, settings.crop.h
    nw, nh = scaled_size(w, h, settings.alpha)
    sx, sy = nw / w, nh / h
    # pixel centres map to pixel centres under the resize convention; the
    # result is rounded to f32 because that is what the wire carries
    return [Point2(float(np.float32((p[0] - ox + 0.5) * sx - 0.5)), float(np.float32((p[1] - oy + 0.5) * sy - 0.5)))
            for p in points]


class ServerOutcome(NamedTuple):
    decision: VerificationDecision
    decode_s: float
    postproc_s: float


def server_process(ref_payload: bytes, tgt_payload: bytes, ref_points, tgt_points, step_class: int,
                   frame_key, segmenter, policy: VerificationPolicy) -> ServerOutcome:
    """Decode both frames, align, extract masks and verify.

    ``ref_payload`` is the virtual layer alone (guidance rendered on black).
    Alignment runs when both point lists hold at least four points.
    """
    t0 = time.perf_counter()
    layer = decode(ref_payload)
    target = decode(tgt_payload)
    t1 = time.perf_counter()
    if ref_points is not None and tgt_points is not None and min(len(ref_points), len(tgt_points)) >= 4:
        target = align_target(ref_points, tgt_points, target, layer.size)
    ref_mask = extract_reference_mask(layer)
    candidates = segment(frame_key, step_class, segmenter, frame=target)
    decision = verify(ref_mask, candidates, policy)
    t2 = time.perf_counter()
    return ServerOutcome(decision, t1 - t0, t2 - t1)


def pair_payloads(virtual_layer: Frame, target: Frame, alignment_points, settings: ClientSettings,
                  prepared_target: PreparedFrame | None = None):
    """Client-side encoding of one pair: (virtual layer, target, reference points, target points)."""
    # the virtual layer always travels lossless: the binary filter needs exact
    # zeros, which a DCT codec does not preserve
    ref = prepare_frame(virtual_layer, settings, CodecSpec.lossless())
    tgt = prepared_target or prepare_frame(target, settings)
    ref_pts = tgt_pts = None
    if alignment_points is not None:
        ref_pts = transform_points(alignment_points[0], virtual_layer.size, settings)
        tgt_pts = transform_points(alignment_points[1], target.size, settings)
    return ref, tgt, ref_pts, tgt_pts


def offline_decision(virtual_layer: Frame, target: Frame, alignment_points, step_class: int, frame_key,
                     settings: ClientSettings, segmenter, policy: VerificationPolicy,
                     prepared_target: PreparedFrame | None = None) -> VerificationDecision:
    ref, tgt, ref_pts, tgt_pts = pair_payloads(virtual_layer, target, alignment_points, settings, prepared_target)
    return server_process(ref.payload, tgt.payload, ref_pts, tgt_pts, step_class,
                          frame_key, segmenter, policy).decision


def baseline_pair_score(reference: Frame, target: Frame, settings: ClientSettings, metric: Metric) -> float:
    """Frame-similarity score between the composite reference and the target.

    Both frames go through the same crop/scale/codec path as the IoU method.
    NRMSE is a distance, so it is negated to keep "higher means match".
    """
    ref = decode(prepare_frame(reference, settings).payload)
    tgt = decode(prepare_frame(target, settings).payload)
    v = baseline_score(metric, ref, tgt).value
    return -v if metric is Metric.NRMSE else v


def make_segmenter(manifest, kind: str = "oracle", perturbation: PerturbationSpec | None = None,
                   command: Sequence[str] | None = None):
    if kind == "oracle":
        return OracleSegmenter(manifest.oracle_labels(), perturbation)
    if kind == "adapter":
        from .segmentation import ExternalSegmenter
        if not command:
            raise ValueError("the adapter segmenter needs a command")
        return ExternalSegmenter(list(command))
    raise ValueError(f"unknown segmenter {kind!r}")


@dataclass(frozen=True)
class EvalJob:
    method: str = "iou"
    settings: ClientSettings = field(default_factory=ClientSettings)
    policy: VerificationPolicy = field(default_factory=VerificationPolicy)
    segmenter: str = "oracle"
    perturbation: PerturbationSpec | None = None
    command: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")


class SampleResult(NamedTuple):
    index: int
    score: float
    truth: bool
    iou_micro: int | None
    passed: bool | None


def score_sample(manifest, i: int, job: EvalJob, segmenter=None, cache: dict | None = None) -> SampleResult:
    """Score one sample. ``cache`` keeps encoded targets, which many samples share."""
    e = manifest.samples[i]
    target = manifest.load_frame(i, "target")
    if job.method == "iou":
        seg = segmenter or make_segmenter(manifest, job.segmenter, job.perturbation, job.command)
        prepared = None
        if cache is not None:
            prepared = cache.get(e.target)
            if prepared is None:
                prepared = cache[e.target] = prepare_frame(target, job.settings)
        d = offline_decision(manifest.load_frame(i, "virtual_layer"), target, e.alignment_points,
                             e.step_class, e.step_index, job.settings, seg, job.policy, prepared)
        return SampleResult(i, d.iou, e.ground_truth, d.iou_micro, d.passed)
    v = baseline_pair_score(manifest.load_frame(i, "reference"), target, job.settings, Metric(job.method))
    return SampleResult(i, v, e.ground_truth, None, None)


_worker: dict = {}


def _init_worker(manifest_path, job):
    from .dataset import load_manifest
    m = load_manifest(manifest_path, verify=False)
    _worker["manifest"] = m
    _worker["job"] = job
    _worker["cache"] = {}
    _worker["segmenter"] = make_segmenter(m, job.segmenter, job.perturbation, job.command) \
        if job.method == "iou" else None


def _score_in_worker(i):
    return score_sample(_worker["manifest"], i, _worker["job"], _worker["segmenter"], _worker["cache"])


def score_manifest(manifest, job: EvalJob, jobs: int = 1, indices: Sequence[int] | None = None
                   ) -> list[SampleResult]:
    """Score samples in index order; ``jobs`` > 1 fans out over worker processes."""
    idx = list(range(len(manifest.samples))) if indices is None else list(indices)
    if jobs <= 1 or len(idx) < 2:
        seg = make_segmenter(manifest, job.segmenter, job.perturbation, job.command) \
            if job.method == "iou" else None
        cache: dict = {}
        return [score_sample(manifest, i, job, seg, cache) for i in idx]
    path = manifest.root / f"{manifest.split}.json"
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(path, job)) as ex:
        results = list(ex.map(_score_in_worker, idx, chunksize=max(1, len(idx) // (4 * jobs))))
    return sorted(results, key=lambda r: r.index)


def evaluate(manifest, job: EvalJob, threshold: float | None = None, jobs: int = 1,
             grid=None) -> EvaluationReport:
    """Score every sample and summarize. With ``threshold`` None the most accurate one is used."""
    results = score_manifest(manifest, job, jobs)
    report = evaluate_scores([r.score for r in results], [r.truth for r in results], job.method,
                             threshold=threshold, grid=grid, indices=[r.index for r in results])
    report.extra.update({
        "split": manifest.split, "alpha": job.settings.alpha, "codec": str(job.settings.codec),
        "segmenter": job.segmenter,
        "perturbation": None if job.perturbation is None else job.perturbation.__dict__,
        "samples": len(results),
    })
    if job.method == "iou":
        report.extra["iou_micro"] = [r.iou_micro for r in results]
    return report


def median_gap(results: Sequence[SampleResult]) -> float:
    """Median positive score minus median negative score."""
    pos = [r.score for r in results if r.truth]
    neg = [r.score for r in results if not r.truth]
    return float(np.median(pos) - np.median(neg))
