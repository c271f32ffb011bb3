"""Client simulator with per-stage latency accounting.

Two drivers share one connection type:

``run_client_session`` replays a dataset manifest, one pair per sample.
``run_motion_session`` feeds synthetic camera frames through the motion
state machine, which decides when references and targets are captured.

Communication time is not observable directly from one side, so it is
derived: end-to-end minus client preprocessing and encoding minus the
server's reported decode and post-processing time.
"""

from __future__ import annotations

import csv
import json
import logging
import socket
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConnectionLost, ProtocolError, Timeout
from ..geometry import Homography, project_many, sample_plane_points, warp_frame
from ..imaging import Frame
from ..motion import (
    MotionConfig,
    MotionEvent,
    MotionState,
    SkinModel,
    acknowledge_feedback,
    effective_threshold,
    step,
)
from ..pipeline import ClientSettings, pair_payloads
from .wire import (
    Error,
    ReferenceFrame,
    SessionInit,
    StepControl,
    TargetFrame,
    VerifyResult,
    read_message,
    write_message,
)

log = logging.getLogger(__name__)

LATENCY_FIELDS = ("preproc_ms", "encode_ms", "comm_ms", "decode_ms", "postproc_ms", "end_to_end_ms")
SIZE_FIELDS = ("ref_bytes", "tgt_bytes")


@dataclass
class StepRecord:
    index: int
    step_index: int
    preproc_ms: float
    encode_ms: float
    comm_ms: float
    decode_ms: float
    postproc_ms: float
    end_to_end_ms: float
    ref_bytes: int
    tgt_bytes: int
    passed: bool | None
    iou_micro: int | None
    next_step: int | None
    ground_truth: bool | None = None
    error: str | None = None


@dataclass
class SessionLog:
    records: list[StepRecord] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def summary(self) -> dict[str, dict[str, float]]:
        """mean / median / p95 / p99 of each latency and size field over completed records."""
        done = [r for r in self.records if r.error is None]
        out = {}
        for name in LATENCY_FIELDS + SIZE_FIELDS:
            v = np.array([getattr(r, name) for r in done], dtype=np.float64)
            if v.size == 0:
                out[name] = {"mean": float("nan"), "median": float("nan"), "p95": float("nan"),
                             "p99": float("nan")}
                continue
            out[name] = {"mean": float(v.mean()), "median": float(np.median(v)),
                         "p95": float(np.percentile(v, 95)), "p99": float(np.percentile(v, 99))}
        return out

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")
        return path

    def write_summary_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "mean", "median", "p95", "p99", "count"])
            n = sum(1 for r in self.records if r.error is None)
            for name, s in self.summary().items():
                w.writerow([name, f"{s['mean']:.6g}", f"{s['median']:.6g}", f"{s['p95']:.6g}",
                            f"{s['p99']:.6g}", n])
        return path

    @classmethod
    def read_jsonl(cls, path) -> SessionLog:
        records = [StepRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
        return cls(records)


class EdgeClient:
    """One TCP connection to the edge server; the log is attached to any failure."""

    def __init__(self, endpoint, timeout: float = 5.0, log: SessionLog | None = None):
        self.endpoint = tuple(endpoint)
        self.timeout = timeout
        self.log = log if log is not None else SessionLog()
        try:
            self.sock = socket.create_connection(self.endpoint, timeout=timeout)
        except socket.timeout as exc:
            raise Timeout(f"connect to {self.endpoint} timed out", self.log) from exc
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to {self.endpoint}: {exc}", self.log) from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def send(self, msg) -> int:
        try:
            return write_message(self.sock, msg)
        except socket.timeout as exc:
            raise Timeout("send timed out", self.log) from exc
        except OSError as exc:
            raise ConnectionLost(f"send failed: {exc}", self.log) from exc

    def recv(self):
        try:
            return read_message(self.sock)
        except socket.timeout as exc:
            raise Timeout(f"no reply within {self.timeout} s", self.log) from exc
        except (EOFError, OSError) as exc:
            raise ConnectionLost(f"connection lost: {exc or 'closed by peer'}", self.log) from exc
        except ProtocolError as exc:
            raise ConnectionLost(f"unreadable reply: {exc}", self.log) from exc

    def verify_pair(self, init: SessionInit, ref: ReferenceFrame, tgt: TargetFrame):
        """Send one pair; returns (VerifyResult, StepControl) or an Error message."""
        self.send(init)
        self.send(ref)
        self.send(tgt)
        reply = self.recv()
        if isinstance(reply, Error):
            return reply, None
        if not isinstance(reply, VerifyResult):
            raise ConnectionLost(f"expected VerifyResult, got {type(reply).__name__}", self.log)
        t_result = time.perf_counter()
        ctl = self.recv()
        if not isinstance(ctl, StepControl):
            raise ConnectionLost(f"expected StepControl, got {type(ctl).__name__}", self.log)
        return (reply, t_result), ctl


def _send_pair(client: EdgeClient, index: int, step_index: int, step_class: int, model_id: int,
               virtual_layer: Frame, target: Frame, points, settings: ClientSettings, t_start: float,
               ground_truth: bool | None = None) -> StepRecord:
    ref, tgt, ref_pts, tgt_pts = pair_payloads(virtual_layer, target, points, settings)
    init = SessionInit(model_id, step_index, step_class)
    ref_msg = ReferenceFrame(int(round(settings.alpha * 1000)), settings.codec.to_wire(), ref_pts or (), ref.payload)
    tgt_msg = TargetFrame(tgt_pts or (), tgt.payload)
    result, ctl = client.verify_pair(init, ref_msg, tgt_msg)
    preproc = (ref.preproc_s + tgt.preproc_s) * 1e3
    encode = (ref.encode_s + tgt.encode_s) * 1e3
    if ctl is None:
        elapsed = (time.perf_counter() - t_start) * 1e3
        return StepRecord(index, step_index, preproc, encode, max(0.0, elapsed - preproc - encode), 0.0, 0.0,
                          elapsed, len(ref.payload), len(tgt.payload), None, None, None, ground_truth,
                          error=f"{result.code}: {result.message}")
    vr, t_result = result
    e2e = (t_result - t_start) * 1e3
    dec = vr.server_decode_us / 1e3
    post = vr.server_postproc_us / 1e3
    comm = max(0.0, e2e - preproc - encode - dec - post)
    return StepRecord(index, step_index, preproc, encode, comm, dec, post, e2e, len(ref.payload),
                      len(tgt.payload), vr.passed, vr.iou_micro, ctl.next_step, ground_truth)


def run_client_session(manifest, endpoint, settings: ClientSettings | None = None, timeout: float = 5.0,
                       indices: Sequence[int] | None = None) -> SessionLog:
    """Send every (or every listed) sample of ``manifest`` over one connection.

    Frames are read from disk before the clock starts; the clock covers
    crop/scale/encode, the round trip and the server's work.
    """
    settings = settings or ClientSettings()
    session = SessionLog(settings={"alpha": settings.alpha, "codec": str(settings.codec),
                                   "endpoint": f"{endpoint[0]}:{endpoint[1]}"})
    idx = range(len(manifest.samples)) if indices is None else indices
    with EdgeClient(endpoint, timeout, session) as client:
        for i in idx:
            e = manifest.samples[i]
            layer = manifest.load_frame(i, "virtual_layer")
            target = manifest.load_frame(i, "target")
            t0 = time.perf_counter()
            rec = _send_pair(client, i, e.step_index, e.step_class, manifest.model_id, layer, target,
                             e.alignment_points, settings, t0, e.ground_truth)
            session.records.append(rec)
            if rec.error:
                log.warning("sample %d: server error %s", i, rec.error)
    return session


# ------------------------------------------------------------ motion driver

SKIN_TONE = (224, 172, 140)


def overlay_hand(frame: Frame, rng: np.random.Generator, coverage: float = 0.2) -> Frame:
    """Paint a skin-coloured ellipse covering roughly ``coverage`` of the frame."""
    h, w = frame.height, frame.width
    area = coverage * w * h
    aspect = rng.uniform(0.6, 1.4)
    a = np.sqrt(area / np.pi * aspect)
    b = area / (np.pi * a)
    cx = rng.uniform(0.3, 0.7) * w
    cy = rng.uniform(0.5, 1.0) * h
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    px = frame.pixels.copy()
    shade = np.clip(np.array(SKIN_TONE) + rng.normal(0, 4, size=(int(inside.sum()), 3)), 0, 255)
    px[inside] = shade.astype(np.uint8)
    return Frame(px)


@dataclass(frozen=True)
class CameraMotion:
    """A fixed homography applied to target captures, as if the device moved."""

    homography: Homography

    @classmethod
    def perspective(cls, width: int, height: int, shift: float = 6.0, tilt: float = 2e-5) -> CameraMotion:
        cx, cy = width / 2, height / 2
        m = np.array([[1.0, 0.01, shift], [-0.01, 1.0, -shift / 2], [tilt, -tilt / 2, 1.0]])
        c = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
        ci = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
        return cls(Homography(c @ m @ ci))


@dataclass
class MotionRun:
    log: SessionLog
    events: list[tuple[int, MotionEvent]]


def run_motion_session(manifest, endpoint, hands: Sequence[bool], settings: ClientSettings | None = None,
                       skin: SkinModel | None = None, motion: MotionConfig | None = None,
                       tag_distance: float | None = None, camera: CameraMotion | None = None,
                       timeout: float = 5.0, seed: int = 0, realtime: bool = False) -> MotionRun:
    """Drive captures from a scripted hand-presence sequence, one entry per capture period.

    Each CaptureReference takes the next manifest sample as the displayed
    guidance; the matching CaptureTarget sends that pair. ``camera`` warps
    target captures and moves their alignment points accordingly, so the
    server's alignment step has real work to do.
    """
    settings = settings or ClientSettings()
    skin = skin or SkinModel()
    motion = motion or MotionConfig()
    threshold = motion.base_threshold if tag_distance is None else effective_threshold(motion, tag_distance)
    rng = np.random.default_rng(seed)
    session = SessionLog(settings={"alpha": settings.alpha, "codec": str(settings.codec), "mode": "motion"})
    events: list[tuple[int, MotionEvent]] = []
    state = MotionState()
    current: int | None = None
    next_sample = 0
    with EdgeClient(endpoint, timeout, session) as client:
        for tick, hand in enumerate(hands):
            if current is None and next_sample >= len(manifest.samples):
                break
            shown = next_sample if current is None else current
            scene = manifest.load_frame(shown, "target")
            frame = overlay_hand(scene, rng) if hand else scene
            t_tick = time.perf_counter()
            state, ev = step(state, frame, skin, threshold)
            events.append((tick, ev))
            if ev is MotionEvent.CAPTURE_REFERENCE:
                current = next_sample
                next_sample += 1
            elif ev is MotionEvent.CAPTURE_TARGET and current is not None:
                e = manifest.samples[current]
                layer = manifest.load_frame(current, "virtual_layer")
                points = e.alignment_points
                if points is None:
                    pts = sample_plane_points(scene.width, scene.height)
                    points = (pts, list(pts))
                target = frame
                if camera is not None:
                    target = warp_frame(frame, camera.homography, frame.size)
                    moved = project_many(camera.homography, points[1])
                    points = (points[0], [tuple(p) for p in moved])
                rec = _send_pair(client, current, e.step_index, e.step_class, manifest.model_id, layer, target,
                                 points, settings, t_tick, e.ground_truth)
                session.records.append(rec)
                state = acknowledge_feedback(state)
                current = None
            if realtime:
                time.sleep(max(0.0, motion.capture_period_ms / 1e3 - (time.perf_counter() - t_tick)))
    return MotionRun(session, events)
