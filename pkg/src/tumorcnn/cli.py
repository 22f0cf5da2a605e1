"""Command-line experiment runner: ``train``, ``eval``, ``report``, ``params``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import data, metrics, nn, reports, train
from .config import ExperimentConfig, load_config
from .errors import TumorCNNError

log = logging.getLogger("tumorcnn")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


def _add_config_flags(p: argparse.ArgumentParser, keys=None) -> None:
    p.add_argument("--config", help="INI file with an [experiment] section")
    for f in fields(ExperimentConfig):
        if keys is not None and f.name not in keys:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = {"int": int, "float": float}.get(f.type, str)
            p.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.name.upper())


def _config_from(args) -> ExperimentConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(ExperimentConfig)}
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config_from(args)
    if not cfg.data or not Path(cfg.data).is_dir():
        print(f"error: dataset root {cfg.data or '(unset)'} does not exist", file=sys.stderr)
        return EXIT_USAGE
    result = train.run_experiment(cfg)
    for fold, report in sorted(result.reports.items()):
        print(f"fold {fold}: accuracy {report.accuracy:.4f}  macro_f1 {report.macro_f1:.4f}  "
              f"macro_auc {report.macro_auc if report.macro_auc is not None else 'undefined'}")
    for fold, reason in sorted(result.failed.items()):
        print(f"fold {fold}: FAILED ({reason})", file=sys.stderr)
    return EXIT_PARTIAL if result.failed else EXIT_OK


def cmd_eval(args) -> int:
    ckpt = train.load_checkpoint(args.checkpoint)
    cfg = ckpt.config.updated({"data": args.data})
    source = train.load_source(cfg)
    if source.class_names != ckpt.class_names:
        raise TumorCNNError(
            f"checkpoint classes {ckpt.class_names} do not match dataset classes {source.class_names}")
    if args.subset == "all":
        subset = range(len(source))
    else:
        plan = train.plan_for(cfg, source)
        subset = plan.test(ckpt.fold) if args.subset == "test" else plan.train(ckpt.fold)
    report = train.evaluate(ckpt.model, source, subset, cfg.batch_size)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    reports.write_fold_reports(report, ckpt.fold, out)
    print(f"accuracy {report.accuracy:.4f}  macro_f1 {report.macro_f1:.4f}  "
          f"macro_auc {report.macro_auc if report.macro_auc is not None else 'undefined'}")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    fold_dirs = sorted(d for d in run.glob("fold_*") if (d / "confusion.csv").exists())
    if not fold_dirs:
        print(f"error: no fold reports under {run}", file=sys.stderr)
        return EXIT_USAGE
    summary = metrics.aggregate([reports.read_fold_report(d) for d in fold_dirs])
    csv_path, txt_path = reports.write_summary(summary, run)
    print(txt_path.read_text(), end="")
    print(f"summary written to {csv_path} and {txt_path}")
    return EXIT_OK


def cmd_params(args) -> int:
    t0 = time.perf_counter()
    cfg = _config_from(args)
    classes = cfg.classes
    if args.data:
        classes = len(data.scan_dataset(args.data, check=False).class_names)
    spec = nn.build_proposed_cnn((168, 168, 3), classes, slope=cfg.leaky_slope, dropout=cfg.dropout)
    rows = nn.architecture_table(spec)
    width = max(len(r[0]) for r in rows)
    print(f"{'layer':<{width}}  {'output shape':<16}{'params':>12}")
    for label, shape, count in rows:
        print(f"{label:<{width}}  {str(shape):<16}{count:>12,}")
    total = nn.trainable_param_count(spec)
    print(f"Total params: {total:,}")
    print(f"Trainable params: {total:,}")
    spatial = _dedupe([shape[0] for shape in spec.shape_trace() if len(shape) == 3])
    print("Spatial trace: " + " -> ".join(str(s) for s in spatial))
    log.debug("params computed in %.3fs", time.perf_counter() - t0)
    return EXIT_OK


def _dedupe(seq):
    out = []
    for s in seq:
        if not out or out[-1] != s:
            out.append(s)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumorcnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="cross-validated training")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a fold checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (defaults to the one recorded in the checkpoint)")
    p.add_argument("--subset", choices=("test", "train", "all"), default="test")
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate fold reports of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("params", help="architecture table and parameter count")
    _add_config_flags(p, keys={"data", "classes", "leaky_slope", "dropout"})
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TumorCNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
