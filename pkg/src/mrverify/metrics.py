"""Confusion counts, threshold sweeps, ROC/AUC and threshold selection.

A sample is detected positive when its score is strictly greater than the
threshold.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, TooFewPoints, UndefinedRate

GRID_STEPS = 1001


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


class Rates(NamedTuple):
    ppv: float
    tpr: float
    fpr: float
    acc: float


class RocPoint(NamedTuple):
    threshold: float
    fpr: float
    tpr: float
    acc: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]

    def __post_init__(self):
        pts = tuple(RocPoint(*p) for p in self.points)
        object.__setattr__(self, "points", pts)
        th = [p.threshold for p in pts]
        if any(b < a for a, b in zip(th, th[1:])):
            raise ValueError("curve points must be sorted by threshold")

    def __len__(self):
        return len(self.points)


def _validate(scores, truths) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=bool).ravel()
    if s.size != t.size:
        raise LengthMismatch(f"{s.size} scores vs {t.size} truths")
    if s.size == 0:
        raise EmptyInput("no samples")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    return s, t


def confusion(scores: Sequence[float], truths: Sequence[bool], threshold: float) -> ConfusionCounts:
    s, t = _validate(scores, truths)
    detected = s > threshold
    return ConfusionCounts(
        tp=int(np.count_nonzero(detected & t)),
        fn=int(np.count_nonzero(~detected & t)),
        fp=int(np.count_nonzero(detected & ~t)),
        tn=int(np.count_nonzero(~detected & ~t)),
    )


def rates(c: ConfusionCounts) -> Rates:
    if c.tp + c.fp == 0:
        raise UndefinedRate("ppv")
    if c.tp + c.fn == 0:
        raise UndefinedRate("tpr")
    if c.fp + c.tn == 0:
        raise UndefinedRate("fpr")
    if c.total == 0:
        raise UndefinedRate("acc")
    return Rates(c.tp / (c.tp + c.fp), c.tp / (c.tp + c.fn), c.fp / (c.fp + c.tn), (c.tp + c.tn) / c.total)


def partial_rates(c: ConfusionCounts) -> dict[str, float | None]:
    """Like ``rates`` but with None in place of undefined values."""
    def div(a, b):
        return a / b if b else None
    return {
        "ppv": div(c.tp, c.tp + c.fp),
        "tpr": div(c.tp, c.tp + c.fn),
        "fpr": div(c.fp, c.fp + c.tn),
        "acc": div(c.tp + c.tn, c.total),
    }


def default_grid(scores: Sequence[float], steps: int = GRID_STEPS) -> np.ndarray:
    """Evenly spaced thresholds over the finite score range, every midpoint
    between distinct scores, and one point just outside each end."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    finite = np.unique(s[np.isfinite(s)])
    if finite.size == 0:
        return np.array([0.0])
    lo, hi = float(finite[0]), float(finite[-1])
    eps = max(1e-9, 1e-6 * (hi - lo), 1e-12 * max(abs(lo), abs(hi)))
    mids = (finite[:-1] + finite[1:]) / 2.0
    # neighbouring floats have no representable midpoint; under strict '>' the
    # lower score itself separates the pair
    mids = np.where(mids < finite[1:], mids, finite[:-1])
    parts = [np.linspace(lo, hi, steps), mids, [lo - eps, hi + eps]]
    return np.unique(np.concatenate(parts))


def sweep(scores: Sequence[float], truths: Sequence[bool], grid: Sequence[float] | None = None) -> RocCurve:
    s, t = _validate(scores, truths)
    grid = default_grid(s) if grid is None else np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise EmptyInput("empty threshold grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("threshold grid must be sorted ascending")
    pos = np.sort(s[t])
    neg = np.sort(s[~t])
    if pos.size == 0:
        raise UndefinedRate("tpr")
    if neg.size == 0:
        raise UndefinedRate("fpr")
    tp = pos.size - np.searchsorted(pos, grid, side="right")
    fp = neg.size - np.searchsorted(neg, grid, side="right")
    tn = neg.size - fp
    tpr = tp / pos.size
    fpr = fp / neg.size
    acc = (tp + tn) / s.size
    return RocCurve(tuple(RocPoint(float(g), float(f), float(r), float(a))
                          for g, f, r, a in zip(grid, fpr, tpr, acc)))


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under TPR(FPR), closing the curve at (0, 0) and (1, 1)."""
    if len(curve) < 2:
        raise TooFewPoints(f"need at least 2 curve points, got {len(curve)}")
    pts = sorted({(p.fpr, p.tpr) for p in curve.points} | {(0.0, 0.0), (1.0, 1.0)})
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def best_threshold(curve: RocCurve) -> tuple[float, float]:
    """Threshold with the highest accuracy; the smallest one wins ties."""
    if len(curve) == 0:
        raise EmptyInput("empty curve")
    best = curve.points[0]
    for p in curve.points[1:]:
        if p.acc > best.acc:
            best = p
    return best.threshold, best.acc


class SampleRecord(NamedTuple):
    index: int
    score: float
    truth: bool
    predicted: bool


@dataclass
class EvaluationReport:
    method: str
    threshold: float
    counts: ConfusionCounts
    ppv: float | None
    tpr: float | None
    fpr: float | None
    acc: float | None
    auc: float
    best_threshold: float
    best_acc: float
    records: list[SampleRecord] = field(default_factory=list)
    curve: RocCurve | None = None
    extra: dict = field(default_factory=dict)

    def recompute_counts(self) -> ConfusionCounts:
        return confusion([r.score for r in self.records], [r.truth for r in self.records], self.threshold)

    def to_json(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
        return {
            "schema": "mrverify.report/1",
            "method": self.method,
            "threshold": self.threshold,
            "counts": asdict(self.counts),
            "ppv": self.ppv, "tpr": self.tpr, "fpr": self.fpr, "acc": self.acc,
            "auc": self.auc,
            "best_threshold": self.best_threshold,
            "best_acc": self.best_acc,
            "records": [
                {"index": r.index, "score": num(r.score), "score_inf": _inf_tag(r.score),
                 "truth": r.truth, "predicted": r.predicted}
                for r in self.records
            ],
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, d: dict) -> EvaluationReport:
        records = []
        for r in d["records"]:
            score = r["score"] if r["score"] is not None else _from_inf_tag(r.get("score_inf"))
            records.append(SampleRecord(int(r["index"]), float(score), bool(r["truth"]), bool(r["predicted"])))
        return cls(
            method=d["method"], threshold=d["threshold"], counts=ConfusionCounts(**d["counts"]),
            ppv=d["ppv"], tpr=d["tpr"], fpr=d["fpr"], acc=d["acc"], auc=d["auc"],
            best_threshold=d["best_threshold"], best_acc=d["best_acc"], records=records,
            extra=d.get("extra", {}),
        )


def _inf_tag(x: float) -> str | None:
    if isinstance(x, float) and math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return None


def _from_inf_tag(tag) -> float:
    if tag == "+inf":
        return math.inf
    if tag == "-inf":
        return -math.inf
    return math.nan


def evaluate_scores(scores, truths, method: str = "iou", threshold: float | None = None,
                    grid=None, indices=None) -> EvaluationReport:
    """Sweep, pick the most accurate threshold (unless one is given) and tally the outcome."""
    s, t = _validate(scores, truths)
    curve = sweep(s, t, grid)
    best_t, best_a = best_threshold(curve)
    thr = best_t if threshold is None else float(threshold)
    counts = confusion(s, t, thr)
    r = partial_rates(counts)
    idx = range(len(s)) if indices is None else indices
    records = [SampleRecord(int(i), float(v), bool(tr), bool(v > thr)) for i, v, tr in zip(idx, s, t)]
    return EvaluationReport(
        method=method, threshold=thr, counts=counts, ppv=r["ppv"], tpr=r["tpr"], fpr=r["fpr"],
        acc=r["acc"], auc=auc(curve), best_threshold=best_t, best_acc=best_a,
        records=records, curve=curve,
    )


def write_report(report: EvaluationReport, out_dir, stem: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / f"{stem}.json"
    jpath.write_text(json.dumps(report.to_json(), indent=1))
    cpath = out_dir / f"{stem}_curve.csv"
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr", "acc"])
        for p in (report.curve.points if report.curve else ()):
            w.writerow([repr(p.threshold), repr(p.fpr), repr(p.tpr), repr(p.acc)])
    return jpath, cpath


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_json(json.loads(Path(path).read_text()))
