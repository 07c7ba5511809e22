"""Command-line surface: synth, train, eval, track, report.

Exit codes: 0 success, 2 input/config error, 3 training abort,
4 tracking fault.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from pathlib import Path

from .bench import (GroundTruthOracle, export_report, load_report, run_ope,
                    MetricError)
from .checkpoint import CheckpointError
from .config import data_root, load_run_config, build_model
from .recurrent import ConfigError
from .synth import (SequenceIOError, SpecError, export_suite, import_sequence,
                    import_suite, make_benchmark_suite, make_training_suite)
from .tracker import Tracker, TrackerModel, TrackingFault
from .trainer import TrainerError, save_train_log, train

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAIN_ABORT = 3
EXIT_TRACKING_FAULT = 4

INPUT_ERRORS = (ConfigError, SpecError, SequenceIOError, CheckpointError,
                TrainerError, MetricError, OSError, ValueError)


def _apply_thread_cap(threads: int) -> None:
    """Best-effort cap on BLAS worker threads; 1 keeps runs bitwise stable."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(limits=threads)


def _resolve_data(path_text: str) -> Path:
    p = Path(path_text)
    return p if p.is_absolute() else data_root() / p


def cmd_synth(args) -> int:
    if args.spec:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            read = parser.read(args.spec)
        except configparser.Error as exc:
            raise SpecError(f"malformed suite spec {args.spec}: {exc}") from exc
        if not read or "suite" not in parser:
            raise SpecError(f"suite spec {args.spec} missing or lacks [suite]")
        suite_cfg = parser["suite"]
        kind = suite_cfg.get("kind", "benchmark").strip().lower()
        length = suite_cfg.getint("length", fallback=None)
        count = suite_cfg.getint("count", fallback=None)
    else:
        kind, length, count = "benchmark", None, None
    if kind == "benchmark":
        suite = make_benchmark_suite(args.seed, length=length or 40)
    elif kind == "training":
        suite = make_training_suite(args.seed, count=count or 96,
                                    length=length or 56)
    else:
        raise SpecError(f"unknown suite kind {kind!r}")
    out = Path(args.out)
    export_suite(suite, out)
    from .bench import suite_hash
    tags = sorted({t for s in suite for t in s.tags})
    print(f"wrote {len(suite)} sequences to {out}")
    for tag in tags:
        print(f"  {tag}: {sum(1 for s in suite if tag in s.tags)}")
    print(f"suite hash: {suite_hash(suite)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    if config.data == "synthetic":
        dataset = make_training_suite(config.seed)
    else:
        dataset = import_suite(_resolve_data(config.data))
    model = build_model(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    log = train(model, dataset, config.trainer, progress=print, resume=args.resume)
    save_train_log(log, config.trainlog_path())
    print(f"train log: {config.trainlog_path()}")
    print(f"checkpoint: {config.checkpoint_path()}")
    if log.aborted:
        print(f"training aborted; last good checkpoint at {config.checkpoint_path()}",
              file=sys.stderr)
        return EXIT_TRAIN_ABORT
    return EXIT_OK


def cmd_eval(args) -> int:
    suite = import_suite(_resolve_data(args.suite))
    if args.oracle:
        make_tracker = GroundTruthOracle
        tracker_id = "oracle"
        config_hash = "oracle"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        model = TrackerModel.from_checkpoint(args.checkpoint)
        tracker_id = args.id or f"{model.variant}-{model.scale}"
        config_hash = hashlib.sha256(
            Path(args.checkpoint).read_bytes()).hexdigest()[:16]
        make_tracker = lambda seq: Tracker(model)
    report = run_ope(make_tracker, suite, tracker_id=tracker_id, seed=args.seed,
                     config_hash=config_hash)
    path = export_report(report, args.out)
    print(f"report: {path}")
    print(f"sequences: {len(report.sequences)}  frames: {len(report.all_ious)}")
    print(f"mean IoU: {report.mean_iou:.4f}")
    print(f"lost targets: {report.lost}")
    for name in sorted(report.curves):
        print(f"AUC {name}: {report.curves[name].auc:.4f}")
    return EXIT_TRACKING_FAULT if report.any_failed else EXIT_OK


def cmd_track(args) -> int:
    seq = import_sequence(args.seq)
    if len(seq.frames) < 2:
        raise SequenceIOError(f"{args.seq}: tracking needs at least 2 frames")
    model = TrackerModel.from_checkpoint(args.checkpoint)
    tracker = Tracker(model)
    tracker.init(seq.frames[0], seq.boxes[0])
    lines: list[str] = []
    fault: TrackingFault | None = None
    for frame in seq.frames[1:]:
        try:
            box = tracker.step(frame)
        except TrackingFault as exc:
            fault = exc
            break
        x, y, w, h = box.tlwh()
        lines.append("%d,%d,%d,%d\n" % (round(x), round(y), round(w), round(h)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines), encoding="ascii")
    if fault is not None:
        print(f"tracking fault: {fault}; wrote {len(lines)} lines", file=sys.stderr)
        return EXIT_TRACKING_FAULT
    print(f"wrote {len(lines)} boxes to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = load_report(args.report)
    print(f"tracker: {doc['tracker_id']}  seed: {doc['seed']}")
    print(f"suite hash: {doc['suite_hash']}")
    print(f"mean IoU: {doc['mean_iou']:.4f}")
    print(f"lost targets: {doc['lost_targets']}")
    for name in sorted(doc["curves"]):
        print(f"AUC {name}: {doc['curves'][name]['auc']:.4f}")
    if doc.get("any_failed"):
        print("warning: at least one sequence faulted", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtlab",
        description="Recurrent single-object tracker lab: synthesize data, "
                    "train variants, evaluate, and report.")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker/BLAS thread cap; 1 (default) is deterministic")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence suite")
    p.add_argument("--out", required=True, help="output suite directory")
    p.add_argument("--spec", help="suite spec INI ([suite] kind/length/count)")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a tracker per a run config")
    p.add_argument("--config", required=True, help="run config INI")
    p.add_argument("--resume", action="store_true",
                   help="continue from the config's checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="one-pass evaluation over a suite")
    p.add_argument("--checkpoint", help="model checkpoint (.rtlb)")
    p.add_argument("--suite", required=True, help="suite directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--oracle", action="store_true",
                   help="harness self-test with a ground-truth oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id", help="tracker id recorded in the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", help="track one sequence, write box lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument("--out", required=True, help="output track file")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("report", help="print a saved report summary")
    p.add_argument("--report", required=True, help="report.json path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_cap(args.threads)
    try:
        return args.func(args)
    except TrackingFault as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRACKING_FAULT
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
