"""CSV and text emission of metrics reports and cross-fold summaries."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError
from .metrics import ConfusionMatrix, MetricsReport, RocCurve, Summary, report_from

METRICS_HEADER = ["fold", "class", "precision", "recall", "f1", "flag"]


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_metrics_csv(report: MetricsReport, fold: int, path: str | Path) -> None:
    """Per-class rows, then one ``ALL`` row holding accuracy, macro F1 and macro AUC."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for name, r in zip(report.class_names, report.rates):
            flags = [f for f, on in (("no_predictions", r.no_predictions), ("no_samples", r.no_samples)) if on]
            w.writerow([
                fold, name,
                "" if r.no_predictions else _cell(r.precision),
                "" if r.no_samples else _cell(r.recall),
                "" if r.degenerate else _cell(r.f1),
                ";".join(flags),
            ])
        flag = "" if report.macro_auc is not None and None not in report.auc else "auc_undefined"
        w.writerow([fold, "ALL", _cell(report.accuracy), _cell(report.macro_f1), _cell(report.macro_auc), flag])


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cm.class_names)
        for row in cm.counts.tolist():
            w.writerow(row)


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    counts = np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int64)
    if counts.shape != (len(names), len(names)):
        raise ContractError(f"{path}: confusion matrix shape {counts.shape} does not match {len(names)} classes")
    return ConfusionMatrix(counts, names)


def write_roc_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "threshold", "fpr", "tpr"])
        for name, curve in zip(report.class_names, report.roc):
            if curve is None:
                continue
            for t, x, y in zip(curve.thresholds, curve.fpr, curve.tpr):
                w.writerow([name, repr(float(t)), repr(float(x)), repr(float(y))])


def read_roc_csv(path: str | Path, class_names: list[str]) -> list[Optional[RocCurve]]:
    points: dict[str, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            points.setdefault(row["class"], []).append(
                (float(row["threshold"]), float(row["fpr"]), float(row["tpr"])))
    unknown = set(points) - set(class_names)
    if unknown:
        raise ContractError(f"{path}: unknown classes {sorted(unknown)}")
    curves: list[Optional[RocCurve]] = []
    for name in class_names:
        pts = points.get(name)
        if pts is None:
            curves.append(None)
        else:
            t, x, y = (np.array(v) for v in zip(*pts))
            curves.append(RocCurve(x, y, t))
    return curves


def write_fold_reports(report: MetricsReport, fold: int, fold_dir: str | Path) -> None:
    fold_dir = Path(fold_dir)
    write_metrics_csv(report, fold, fold_dir / "metrics.csv")
    write_confusion_csv(report.confusion, fold_dir / "confusion.csv")
    write_roc_csv(report, fold_dir / "roc.csv")


def read_fold_report(fold_dir: str | Path) -> MetricsReport:
    """Rebuild a report from a fold's confusion.csv and roc.csv."""
    fold_dir = Path(fold_dir)
    cm = read_confusion_csv(fold_dir / "confusion.csv")
    return report_from(cm, read_roc_csv(fold_dir / "roc.csv", cm.class_names))


def write_summary(summary: Summary, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "n_folds"])
        for key in summary.mean:
            w.writerow([key, _cell(summary.mean[key]), _cell(summary.std[key]), summary.counts[key]])
    write_confusion_csv(summary.pooled, out_dir / "pooled_confusion.csv")
    txt_path = out_dir / "summary.txt"
    txt_path.write_text(format_summary(summary))
    return csv_path, txt_path


def format_summary(summary: Summary) -> str:
    lines = [f"Cross-validation summary over {summary.n_folds} fold(s)", ""]
    width = max(len(k) for k in summary.mean)
    for key in summary.mean:
        m, s = summary.mean[key], summary.std[key]
        value = "undefined" if m is None else f"{100 * m:7.2f}% +/- {100 * s:.2f}"
        lines.append(f"  {key:<{width}}  {value}")
    lines += ["", "Pooled confusion matrix (rows = true, columns = predicted):"]
    names = summary.pooled.class_names
    cw = max(max(len(n) for n in names), len(str(summary.pooled.counts.max()))) + 2
    lines.append(" " * cw + "".join(f"{n:>{cw}}" for n in names))
    for name, row in zip(names, summary.pooled.counts.tolist()):
        lines.append(f"{name:>{cw}}" + "".join(f"{v:>{cw}}" for v in row))
    return "\n".join(lines) + "\n"
