"""Confusion matrix, per-class precision/recall/F1, weighted aggregates, accuracy.

Undefined ratios (0/0) are reported as ``nan`` and left out of aggregates
with a warning instead of being counted as zero.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MetricsDataError(ValueError):
    """Label sequences are inconsistent with the class count."""


class DegenerateMetricsError(ValueError):
    """No defined value to aggregate (or nothing to score)."""


class UndefinedMetricWarning(UserWarning):
    pass


def confusion_matrix(truth, pred, n: int) -> np.ndarray:
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if truth.shape != pred.shape:
        raise MetricsDataError(f"length mismatch: {truth.size} truths vs {pred.size} predictions")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise MetricsDataError(f"{name} labels must lie in [0, {n})")
    return np.bincount(truth * n + pred, minlength=n * n).reshape(n, n)


@dataclass
class PerClass:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def per_class_metrics(cm) -> PerClass:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    # a defined pair with p + r == 0 has f1 = 0 by convention
    zero = (precision == 0) & (recall == 0)
    f1[zero] = 0.0
    return PerClass(precision, recall, f1, cm.sum(axis=1))


def aggregate_metrics(values, weights=None) -> float:
    """Weighted mean ``Σ w_i m_i / Σ w_i`` over classes whose value is defined.

    ``weights=None`` means uniform ``1/n`` weights (a macro average).
    """
    values = np.asarray(values, dtype=np.float64)
    w = np.full(values.shape, 1.0 / values.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != values.shape:
        raise ValueError("one weight per class required")
    defined = ~np.isnan(values)
    if not defined.any():
        raise DegenerateMetricsError("every class is undefined")
    if not defined.all():
        warnings.warn(
            f"classes {np.flatnonzero(~defined).tolist()} are undefined and excluded from the average",
            UndefinedMetricWarning, stacklevel=2,
        )
    w = w[defined]
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.sum(w * values[defined]) / np.sum(w))


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise DegenerateMetricsError("empty confusion matrix")
    return float(np.trace(cm) / total)


def row_percentages(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(rows > 0, 100.0 * cm / rows, 0.0)
    return pct


@dataclass
class MetricsReport:
    cm: np.ndarray
    per_class: PerClass
    precision_w: float
    recall_w: float
    f1_w: float
    accuracy: float


def report(truth, pred, n: int, weighting: str = "uniform") -> MetricsReport:
    """Full metric suite; ``weighting`` is ``"uniform"`` or ``"support"``."""
    cm = confusion_matrix(truth, pred, n)
    pc = per_class_metrics(cm)
    if weighting == "uniform":
        w = None
    elif weighting == "support":
        w = pc.support.astype(np.float64)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")

    def agg(v):
        if w is None:
            return aggregate_metrics(v)
        keep = w > 0
        return aggregate_metrics(v[keep], w[keep])

    return MetricsReport(cm, pc, agg(pc.precision), agg(pc.recall), agg(pc.f1), accuracy(cm))


def write_reports(rep: MetricsReport, out_dir: str | Path, class_names=None) -> dict[str, Path]:
    """Write confusion (counts and row-%), per-class and summary CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = rep.cm.shape[0]
    names = list(class_names) if class_names is not None else [f"C{i}" for i in range(n)]
    paths = {
        "confusion_counts": out / "confusion_counts.csv",
        "confusion_percent": out / "confusion_percent.csv",
        "per_class": out / "per_class.csv",
        "summary": out / "summary.csv",
    }
    with open(paths["confusion_counts"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, rep.cm):
            w.writerow([name] + [int(v) for v in row])
    with open(paths["confusion_percent"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, row_percentages(rep.cm)):
            w.writerow([name] + [f"{v:.4f}" for v in row])
    with open(paths["per_class"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "precision", "recall", "f1", "support"])
        pc = rep.per_class
        for i, name in enumerate(names):
            w.writerow([name, _fmt(pc.precision[i]), _fmt(pc.recall[i]), _fmt(pc.f1[i]), int(pc.support[i])])
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["accuracy", "precision", "recall", "f1"])
        w.writerow([_fmt(rep.accuracy), _fmt(rep.precision_w), _fmt(rep.recall_w), _fmt(rep.f1_w)])
    return paths


def _fmt(v: float) -> str:
    return "undefined" if np.isnan(v) else f"{v:.6f}"
