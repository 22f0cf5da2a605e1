"""Confusion matrices, per-class rates, ROC curves and cross-fold summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true: Sequence[int], pred: Sequence[int], classes: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.size == 0:
        raise ContractError("confusion matrix of an empty label set")
    if true.shape != pred.shape:
        raise ContractError(f"{true.size} true labels vs {pred.size} predictions")
    for arr, what in ((true, "true"), (pred, "predicted")):
        if arr.min() < 0 or arr.max() >= classes:
            raise ContractError(f"{what} label out of range [0, {classes})")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    names = list(class_names) if class_names is not None else [str(c) for c in range(classes)]
    return ConfusionMatrix(counts, names)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise DomainError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / total


@dataclass(frozen=True)
class ClassRates:
    precision: float
    recall: float
    f1: float
    no_predictions: bool = False
    no_samples: bool = False

    @property
    def degenerate(self) -> bool:
        return self.no_predictions or self.no_samples


def precision_recall_f1(cm: ConfusionMatrix) -> list[ClassRates]:
    """One-vs-rest rates per class.

    A zero denominator gives 0 and marks the class: ``no_predictions`` when
    nothing was predicted as it (precision undefined), ``no_samples`` when it
    has no true samples (recall undefined).
    """
    counts = cm.counts
    out = []
    for c in range(counts.shape[0]):
        tp = counts[c, c]
        predicted = counts[:, c].sum()
        actual = counts[c, :].sum()
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out.append(ClassRates(float(p), float(r), float(f1), bool(predicted == 0), bool(actual == 0)))
    return out


def macro_f1(rates: Sequence[ClassRates]) -> float:
    """(2/C) * sum_c P_c R_c / (P_c + R_c), terms with P_c + R_c = 0 counted as 0."""
    total = 0.0
    for r in rates:
        if r.precision + r.recall > 0:
            total += r.precision * r.recall / (r.precision + r.recall)
    return 2.0 * total / len(rates)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_curve(scores: Sequence[float], truth: Sequence[bool]) -> RocCurve:
    """ROC points from (0, 0) to (1, 1), one step per distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    pos = int(truth.sum())
    neg = len(truth) - pos
    if pos == 0 or neg == 0:
        raise DomainError("ROC needs both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last position of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    fpr = np.r_[0.0, fp[ends] / neg]
    tpr = np.r_[0.0, tp[ends] / pos]
    thresholds = np.r_[np.inf, s[ends]]
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr, tpr, thresholds = np.r_[fpr, 1.0], np.r_[tpr, 1.0], np.r_[thresholds, -np.inf]
    return RocCurve(fpr, tpr, thresholds)


def auc(curve: RocCurve) -> float:
    """Trapezoid area under the ROC points."""
    x, y = curve.fpr, curve.tpr
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    rates: list[ClassRates]
    accuracy: float
    macro_f1: float
    roc: list[Optional[RocCurve]]
    auc: list[Optional[float]]
    macro_auc: Optional[float]

    @property
    def class_names(self) -> list[str]:
        return self.confusion.class_names

    def scalars(self) -> dict[str, Optional[float]]:
        """Flat metric name -> value, as aggregated across folds."""
        out: dict[str, Optional[float]] = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "macro_auc": self.macro_auc,
        }
        for name, r, a in zip(self.class_names, self.rates, self.auc):
            out[f"{name}.precision"] = r.precision
            out[f"{name}.recall"] = r.recall
            out[f"{name}.f1"] = r.f1
            out[f"{name}.auc"] = a
        return out


def evaluate(true: Sequence[int], probs: np.ndarray, class_names: Sequence[str]) -> MetricsReport:
    """Full report from true labels and per-class probability rows."""
    probs = np.asarray(probs)
    classes = len(class_names)
    if probs.ndim != 2 or probs.shape[1] != classes:
        raise ContractError(f"probability matrix {probs.shape} does not have {classes} columns")
    pred = np.argmax(probs, axis=1)
    cm = confusion(true, pred, classes, class_names)
    return report_from(cm, probs_roc(true, probs))


def probs_roc(true: Sequence[int], probs: np.ndarray) -> list[Optional[RocCurve]]:
    true = np.asarray(true)
    curves: list[Optional[RocCurve]] = []
    for c in range(probs.shape[1]):
        truth = true == c
        curves.append(roc_curve(probs[:, c], truth) if 0 < truth.sum() < len(truth) else None)
    return curves


def report_from(cm: ConfusionMatrix, curves: list[Optional[RocCurve]]) -> MetricsReport:
    rates = precision_recall_f1(cm)
    aucs = [auc(c) if c is not None else None for c in curves]
    defined = [a for a in aucs if a is not None]
    macro_auc = float(np.mean(defined)) if defined else None
    return MetricsReport(cm, rates, accuracy(cm), macro_f1(rates), curves, aucs, macro_auc)


@dataclass
class Summary:
    """Mean and population standard deviation of each scalar across folds."""

    class_names: list[str]
    n_folds: int
    mean: dict[str, Optional[float]]
    std: dict[str, Optional[float]]
    pooled: ConfusionMatrix
    counts: dict[str, int] = field(default_factory=dict)


def aggregate(reports: Sequence[MetricsReport]) -> Summary:
    if not reports:
        raise ContractError("nothing to aggregate")
    names = reports[0].class_names
    for r in reports[1:]:
        if r.class_names != names:
            raise ContractError(f"class tables differ across folds: {names} vs {r.class_names}")
    keys = list(reports[0].scalars())
    mean, std, counts = {}, {}, {}
    for key in keys:
        values = [r.scalars()[key] for r in reports]
        values = [v for v in values if v is not None and not math.isnan(v)]
        counts[key] = len(values)
        if values:
            arr = np.array(values, dtype=np.float64)
            mean[key] = float(arr.mean())
            std[key] = float(arr.std())
        else:
            mean[key] = std[key] = None
    pooled = ConfusionMatrix(sum(r.confusion.counts for r in reports), list(names))
    return Summary(list(names), len(reports), mean, std, pooled, counts)
