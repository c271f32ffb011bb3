"""Command-line entry point: ``mrverify <command> [flags]``.

Settings come from built-in defaults, then ``--config FILE`` (TOML), then
flags; flags win. Exit status is 0 on success, 2 for bad configuration or
usage, 1 for runtime failures. ``MRVERIFY_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import METHODS, SEGMENTERS, RunConfig, load_config
from .dataset import build_dataset, load_manifest, load_sources, write_sources
from .errors import ConfigError, MRVerifyError
from .imaging import CodecSpec
from .metrics import default_grid, evaluate_scores, load_report, write_report
from .pipeline import EvalJob, evaluate, make_segmenter, score_manifest

log = logging.getLogger("mrverify")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run settings (override --config)")
    g.add_argument("--config", type=Path, help="TOML run configuration")
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", type=float, help="downscaling factor in (0, 1]")
    g.add_argument("--codec", help="lossless or lossy:QUALITY")
    g.add_argument("--threshold", type=float, help="IoU pass threshold")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--segmenter", choices=SEGMENTERS)
    g.add_argument("--segmenter-command", nargs="+", dest="segmenter_command",
                   help="external segmenter command (with --segmenter adapter)")
    g.add_argument("--perturb", help="oracle degradation, e.g. radius=2,jitter=2,miss=0.05")
    g.add_argument("--endpoint", help="host:port")
    g.add_argument("--timeout", type=float, help="per-step client timeout in seconds")
    g.add_argument("--jobs", type=int, help="worker processes")
    g.add_argument("--out", help="output directory")
    return p


def _settings(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    cmd = args.segmenter_command
    return base.with_overrides(
        seed=args.seed, alpha=args.alpha, codec=args.codec, threshold=args.threshold, method=args.method,
        segmenter=args.segmenter, segmenter_command=tuple(cmd) if cmd else None, perturb=args.perturb,
        endpoint=args.endpoint, timeout=args.timeout, jobs=args.jobs, out=args.out,
    )


def _job(cfg: RunConfig, method: str | None = None) -> EvalJob:
    return EvalJob(method=method or cfg.method, settings=cfg.client_settings(), policy=cfg.policy(),
                   segmenter=cfg.segmenter, perturbation=cfg.perturbation(),
                   command=cfg.segmenter_command or None)


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, default=str))


# ---------------------------------------------------------------- commands

def cmd_make_fixtures(args, cfg: RunConfig) -> int:
    from .fixtures import make_boards

    boards = make_boards(args.count, cfg.seed)
    write_sources(args.dest, boards)
    print(f"wrote {len(boards)} annotated boards to {args.dest}")
    return 0


def cmd_gen_dataset(args, cfg: RunConfig) -> int:
    src = Path(args.sources) if args.sources else (Path(cfg.dataset.sources) if cfg.dataset.sources else None)
    if src is None:
        raise ConfigError("gen-dataset needs --sources (or dataset.sources in the config)")
    if not src.is_dir():
        print(f"error: sources directory not found: {src}", file=sys.stderr)
        return 2
    dcfg = cfg.dataset_config()
    if args.count is not None:
        if args.count < 0:
            raise ConfigError("--count must be non-negative")
        dcfg = type(dcfg)(**{**dcfg.__dict__, "counts": {s: args.count for s in dcfg.counts}})
    out = _out(cfg)
    manifests = build_dataset(load_sources(src), out, dcfg)
    for split, m in manifests.items():
        print(f"{split}: {len(m.samples)} samples ({m.positives} positive, {m.negatives} negative) "
              f"-> {out / (split + '.json')}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if cfg.method == "cosine" and not args.stub_embeddings:
        raise ConfigError("--method cosine needs an embedding source; pass --stub-embeddings")
    m = load_manifest(args.manifest)
    report = evaluate(m, _job(cfg), threshold=cfg.threshold if args.fixed_threshold else None, jobs=cfg.jobs)
    if cfg.method == "cosine":
        report.extra["embeddings"] = "stub"
    j, c = write_report(report, _out(cfg), f"{m.split}_{cfg.method}")
    print(f"{cfg.method}: acc={report.acc:.4f} auc={report.auc:.4f} threshold={report.threshold:.6g} "
          f"(tp={report.counts.tp} fn={report.counts.fn} fp={report.counts.fp} tn={report.counts.tn})")
    print(f"report: {j}\ncurve: {c}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    if cfg.method == "cosine" and not args.stub_embeddings:
        raise ConfigError("--method cosine needs an embedding source; pass --stub-embeddings")
    m = load_manifest(args.manifest)
    results = score_manifest(m, _job(cfg), cfg.jobs)
    scores = [r.score for r in results]
    grid = default_grid(scores, args.steps) if args.steps else None
    report = evaluate_scores(scores, [r.truth for r in results], cfg.method, grid=grid,
                             indices=[r.index for r in results])
    _, c = write_report(report, _out(cfg), f"{m.split}_{cfg.method}_sweep")
    print(f"best threshold {report.best_threshold:.6g} (acc {report.best_acc:.4f}), auc {report.auc:.4f}")
    print(f"curve: {c}")
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    from .protocol.server import serve

    if cfg.segmenter == "oracle" and not args.manifest:
        raise ConfigError("the oracle segmenter needs --manifest for its labels")
    m = load_manifest(args.manifest) if args.manifest else None
    seg = make_segmenter(m, cfg.segmenter, cfg.perturbation(), cfg.segmenter_command)
    codec = cfg.codec_spec() if args.strict_codec else None
    serve(cfg.endpoint_tuple(), seg, cfg.policy(), codec)
    return 0


def hand_script(samples: int, rng: np.random.Generator) -> list[bool]:
    """Idle, then a few busy ticks, once per sample, ending idle.

    Each idle run needs two ticks: the first one after a busy run captures
    the target, the next one the following reference.
    """
    seq: list[bool] = []
    for _ in range(samples):
        seq += [False] * int(rng.integers(2, 5)) + [True] * int(rng.integers(2, 6))
    return seq + [False, False]


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .protocol.client import CameraMotion, run_client_session, run_motion_session
    from .protocol.server import EdgeServer

    m = load_manifest(args.manifest)
    indices = range(min(args.limit, len(m.samples))) if args.limit else None
    server = None
    if args.endpoint:
        endpoint = cfg.endpoint_tuple()
    else:
        seg = make_segmenter(m, cfg.segmenter, cfg.perturbation(), cfg.segmenter_command)
        server = EdgeServer(("127.0.0.1", 0), seg, cfg.policy()).start()
        endpoint = server.endpoint
    try:
        if args.motion:
            n = len(indices) if indices is not None else len(m.samples)
            hands = hand_script(n, np.random.default_rng(cfg.seed))
            first = m.load_frame(0, "target")
            camera = CameraMotion.perspective(first.width, first.height) if args.camera else None
            run = run_motion_session(m, endpoint, hands, cfg.client_settings(), cfg.skin, cfg.motion,
                                     args.tag_distance, camera, cfg.timeout, cfg.seed, args.realtime)
            session = run.log
            events = [ev.value for _, ev in run.events if ev.value != "none"]
            print(f"motion: {len(hands)} ticks, {events.count('capture_reference')} references, "
                  f"{events.count('capture_target')} targets")
        else:
            session = run_client_session(m, endpoint, cfg.client_settings(), cfg.timeout, indices)
    finally:
        if server is not None:
            server.stop()
    out = _out(cfg)
    jl = session.write_jsonl(out / "session.jsonl")
    cs = session.write_summary_csv(out / "session_summary.csv")
    summ = session.summary()
    if "end_to_end_ms" in summ:
        e = summ["end_to_end_ms"]
        print(f"{len(session)} pairs: end-to-end mean {e['mean']:.1f} ms, median {e['median']:.1f} ms, "
              f"p99 {e['p99']:.1f} ms")
    print(f"log: {jl}\nsummary: {cs}")
    return 0


def _codecs(text: str) -> list[CodecSpec]:
    try:
        return [CodecSpec.parse(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_bench_codec(args, cfg: RunConfig) -> int:
    m = load_manifest(args.manifest)
    rows = bench.codec_table(m, _codecs(args.codecs), cfg.alpha, cfg.perturbation(), cfg.jobs)
    print(bench.format_table(rows))
    print(f"table: {bench.write_csv(rows, _out(cfg) / 'bench_codec.csv')}")
    return 0


def cmd_bench_alpha(args, cfg: RunConfig) -> int:
    from .imaging import check_alpha

    alphas = bench.DEFAULT_ALPHAS
    if args.alphas:
        try:
            alphas = tuple(check_alpha(float(a)) for a in args.alphas.split(","))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    m = load_manifest(args.manifest)
    rows = bench.alpha_table(m, alphas, cfg.codec_spec(), cfg.perturbation(), cfg.jobs)
    print(bench.format_table(rows))
    print(f"table: {bench.write_csv(rows, _out(cfg) / 'bench_alpha.csv')}")
    return 0


def cmd_bench_kernels(args, cfg: RunConfig) -> int:
    rows = bench.kernel_table(args.size, args.repeats, cfg.seed)
    print(f"active backend: {bench.active_backend()}")
    print(bench.format_table(rows))
    print(f"table: {bench.write_csv(rows, _out(cfg) / 'bench_kernels.csv')}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    path = Path(args.input)
    if path.suffix == ".jsonl":
        from .protocol.client import SessionLog

        _emit(SessionLog.read_jsonl(path).summary())
        return 0
    r = load_report(path)
    counts = r.recompute_counts()
    if counts != r.counts:
        print(f"warning: stored counts {r.counts} disagree with per-sample records {counts}", file=sys.stderr)
        return 1
    _emit({"method": r.method, "threshold": r.threshold, "acc": r.acc, "ppv": r.ppv, "tpr": r.tpr,
           "fpr": r.fpr, "auc": r.auc, "best_threshold": r.best_threshold, "best_acc": r.best_acc,
           "counts": r.counts.__dict__, "samples": len(r.records)})
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(prog="mrverify", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        return sp

    sp = add("make-fixtures", cmd_make_fixtures, "write synthetic annotated boards (images/ + labels/)")
    sp.add_argument("dest", type=Path)
    sp.add_argument("--count", type=int, default=24)

    sp = add("gen-dataset", cmd_gen_dataset, "build val/test pair datasets from annotated sources")
    sp.add_argument("--sources", help="directory with images/ and labels/")
    sp.add_argument("--count", type=int, help="samples per split")

    for name, fn, text in (("evaluate", cmd_evaluate, "score a dataset split and write a report"),
                           ("sweep", cmd_sweep, "threshold sweep: ROC/accuracy curve and best threshold")):
        sp = add(name, fn, text)
        sp.add_argument("--manifest", required=True, type=Path)
        sp.add_argument("--stub-embeddings", action="store_true",
                        help="use the built-in color-histogram embedding for --method cosine")
        if name == "evaluate":
            sp.add_argument("--fixed-threshold", action="store_true",
                            help="apply --threshold instead of the most accurate swept threshold")
        else:
            sp.add_argument("--steps", type=int, help="uniform grid size (default 1001 plus midpoints)")

    sp = add("serve", cmd_serve, "run the edge verification server")
    sp.add_argument("--manifest", type=Path, help="dataset whose labels feed the oracle segmenter")
    sp.add_argument("--strict-codec", action="store_true", help="reject frames not using --codec")

    sp = add("simulate", cmd_simulate, "replay a dataset through the client (in-process server unless --endpoint)")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--limit", type=int, help="only the first N samples")
    sp.add_argument("--motion", action="store_true", help="trigger captures from scripted hand motion")
    sp.add_argument("--camera", action="store_true", help="with --motion: warp targets as if the camera moved")
    sp.add_argument("--tag-distance", type=float, help="with --motion: scales the hand threshold")
    sp.add_argument("--realtime", action="store_true", help="with --motion: pace ticks at the capture period")

    sp = add("bench-codec", cmd_bench_codec, "frame size, codec time and accuracy per codec")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--codecs", default="lossless,lossy:80")

    sp = add("bench-alpha", cmd_bench_alpha, "frame size and IoU separation per downscaling factor")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--alphas", help="comma-separated list (default 0.1..1.0)")

    sp = add("bench-kernels", cmd_bench_kernels, "compiled vs numpy kernel timings")
    sp.add_argument("--size", type=int, default=640)
    sp.add_argument("--repeats", type=int, default=3)

    sp = add("report", cmd_report, "summarize a report JSON or a session JSONL")
    sp.add_argument("input", type=Path)
    return p


def _setup_logging() -> None:
    level = os.environ.get("MRVERIFY_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _settings(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MRVerifyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
