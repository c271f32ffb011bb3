"""Benchmark tables: codec comparison, alpha sweep, and compiled-vs-Python kernels."""

from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _pykernels, kernels
from .imaging import CodecSpec, decode
from .metrics import evaluate_scores
from .pipeline import ClientSettings, EvalJob, median_gap, prepare_frame, score_manifest
from .segmentation import PerturbationSpec

DEFAULT_ALPHAS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def _target_stats(manifest, settings: ClientSettings) -> dict:
    """Encoded size per sample plus encode/decode time per distinct target frame."""
    prepared = {}
    decode_s = []
    for i, e in enumerate(manifest.samples):
        if e.target not in prepared:
            p = prepare_frame(manifest.load_frame(i, "target"), settings)
            t0 = time.perf_counter()
            decode(p.payload)
            decode_s.append(time.perf_counter() - t0)
            prepared[e.target] = p
    sizes = [len(prepared[e.target].payload) for e in manifest.samples]
    return {
        "mean_tgt_bytes": float(np.mean(sizes)),
        "encode_ms": 1e3 * float(np.mean([p.encode_s for p in prepared.values()])),
        "decode_ms": 1e3 * float(np.mean(decode_s)),
        "size": next(iter(prepared.values())).size,
    }


def _accuracy(manifest, settings: ClientSettings, perturbation, jobs: int):
    res = score_manifest(manifest, EvalJob(settings=settings, perturbation=perturbation), jobs)
    rep = evaluate_scores([r.score for r in res], [r.truth for r in res])
    return res, rep


def codec_table(manifest, codecs: Sequence[CodecSpec], alpha: float = 0.5,
                perturbation: PerturbationSpec | None = None, jobs: int = 1) -> list[dict]:
    """Size, speed and verification accuracy per codec; ``size_ratio`` is relative to the first row."""
    rows = []
    for codec in codecs:
        settings = ClientSettings(alpha=alpha, codec=codec)
        stats = _target_stats(manifest, settings)
        _, rep = _accuracy(manifest, settings, perturbation, jobs)
        rows.append({
            "codec": str(codec), "mean_tgt_bytes": stats["mean_tgt_bytes"],
            "encode_ms": stats["encode_ms"], "decode_ms": stats["decode_ms"],
            "acc": rep.best_acc, "auc": rep.auc,
        })
    base = rows[0]["mean_tgt_bytes"] if rows else 1.0
    for r in rows:
        r["size_ratio"] = r["mean_tgt_bytes"] / base
    return rows


def alpha_table(manifest, alphas: Sequence[float] = DEFAULT_ALPHAS, codec: CodecSpec | None = None,
                perturbation: PerturbationSpec | None = None, jobs: int = 1) -> list[dict]:
    """Per-alpha frame size, encode time and IoU separation between positives and negatives."""
    rows = []
    for a in alphas:
        settings = ClientSettings(alpha=a, codec=codec or CodecSpec.lossless())
        stats = _target_stats(manifest, settings)
        res, rep = _accuracy(manifest, settings, perturbation, jobs)
        pos = [r.score for r in res if r.truth]
        neg = [r.score for r in res if not r.truth]
        rows.append({
            "alpha": a, "width": stats["size"][0], "height": stats["size"][1],
            "mean_tgt_bytes": stats["mean_tgt_bytes"], "encode_ms": stats["encode_ms"],
            "pos_median_iou": float(np.median(pos)), "neg_median_iou": float(np.median(neg)),
            "iou_gap": median_gap(res), "acc": rep.best_acc, "auc": rep.auc,
        })
    return rows


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def kernel_table(size: int = 640, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Best-of-``repeats`` time for each hot kernel under both backends, plus an equality check."""
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    a = (rng.random((size, size)) < 0.3).astype(np.uint8)
    b = (rng.random((size, size)) < 0.3).astype(np.uint8)
    blob = np.zeros((size, size), dtype=np.uint8)
    blob[size // 4:3 * size // 4, size // 3:2 * size // 3] = 1
    hinv = np.array([[0.98, 0.03, 4.0], [-0.02, 1.01, -3.0], [2e-5, -1e-5, 1.0]])
    cases = {
        "warp_bilinear": lambda k: k.warp_bilinear(img, hinv, size, size),
        "warp_nearest": lambda k: k.warp_nearest(a, hinv, size, size),
        "iou_counts": lambda k: k.iou_counts(a, b),
        "morph_cross(r=2)": lambda k: k.morph_cross(blob, 2, True),
    }
    rows = []
    for name, call in cases.items():
        py_ms = _time(lambda: call(_pykernels), repeats)
        row = {"kernel": name, "size": size, "python_ms": py_ms, "compiled_ms": None,
               "speedup": None, "identical": None}
        if compiled is not None:
            c_ms = _time(lambda: call(compiled), repeats)
            out_c, out_p = call(compiled), call(_pykernels)
            same = all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(out_c, out_p)) \
                if isinstance(out_c, tuple) else np.array_equal(np.asarray(out_c), np.asarray(out_p))
            row.update(compiled_ms=c_ms, speedup=py_ms / c_ms if c_ms > 0 else None, identical=bool(same))
        rows.append(row)
    return rows


def active_backend() -> str:
    return kernels.BACKEND


def write_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return path


def format_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)"
    cols = list(rows[0])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return "-" if v is None else str(v)

    body = [[cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
