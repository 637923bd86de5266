"""Confusion matrices, accuracy/sensitivity/specificity, ROC/AUC, and
multi-run aggregation."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    """Undefined metric (zero denominator) or malformed evaluation input."""


@dataclass
class ConfusionMatrix:
    """Counts indexed [output_class, target_class] in a fixed class order."""

    classes: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if self.counts.shape != (n, n):
            raise MetricError(f"counts must be {n}x{n}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise MetricError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def index(self, cls: str) -> int:
        try:
            return self.classes.index(cls)
        except ValueError:
            raise MetricError(f"class {cls!r} not on matrix axes {self.classes}") from None

    def binary_counts(self, positive_class: str) -> tuple[int, int, int, int]:
        """One-vs-rest (tp, tn, fp, fn) against positive_class."""
        p = self.index(positive_class)
        tp = int(self.counts[p, p])
        fp = int(self.counts[p, :].sum()) - tp
        fn = int(self.counts[:, p].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, tn, fp, fn

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.classes, self.counts.copy())


def confusion(
    predictions: Sequence[str], targets: Sequence[str], classes: Sequence[str]
) -> ConfusionMatrix:
    """Count matrix with entry (output y, target x) = |{i : pred_i=y and target_i=x}|."""
    if len(predictions) != len(targets):
        raise MetricError(
            f"got {len(predictions)} predictions for {len(targets)} targets"
        )
    classes = tuple(classes)
    idx = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for pred, target in zip(predictions, targets):
        if pred not in idx:
            raise MetricError(f"prediction {pred!r} not in classes {classes}")
        if target not in idx:
            raise MetricError(f"target {target!r} not in classes {classes}")
        counts[idx[pred], idx[target]] += 1
    return ConfusionMatrix(classes, counts)


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correctly classified items, trace/total."""
    if cm.total == 0:
        raise MetricError("accuracy undefined on an empty confusion matrix")
    return cm.correct / cm.total


def sensitivity(cm: ConfusionMatrix, positive_class: str) -> float:
    """True-positive rate tp/(tp+fn); one-vs-rest for matrices with N>2."""
    tp, _, _, fn = cm.binary_counts(positive_class)
    if tp + fn == 0:
        raise MetricError(f"sensitivity undefined: no targets of class {positive_class!r}")
    return tp / (tp + fn)


def specificity(cm: ConfusionMatrix, positive_class: str) -> float:
    """True-negative rate tn/(tn+fp); one-vs-rest for matrices with N>2."""
    _, tn, fp, _ = cm.binary_counts(positive_class)
    if tn + fp == 0:
        raise MetricError(f"specificity undefined: no targets outside class {positive_class!r}")
    return tn / (tn + fp)


@dataclass
class RocCurve:
    """Threshold sweep in ROC space: points are (1-specificity, sensitivity)."""

    points: list[tuple[float, float]]
    auc: float
    operating_point: tuple[float, float]
    thresholds: list[float] = field(default_factory=list)


def roc(
    scores: Sequence[float], targets: Sequence[str], positive_class: str
) -> RocCurve:
    """ROC curve from positive-class scores.

    The threshold sweeps over every distinct score plus sentinels; AUC is the
    trapezoidal area. A score tie at 0.5 resolves to the positive class at the
    operating point.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(targets):
        raise MetricError(f"got {len(scores)} scores for {len(targets)} targets")
    if len(scores) == 0:
        raise MetricError("ROC undefined on empty input")
    if ((scores < 0) | (scores > 1)).any():
        raise MetricError("scores must lie in [0, 1]")
    is_pos = np.array([t == positive_class for t in targets], dtype=bool)
    pos = int(is_pos.sum())
    neg = len(targets) - pos
    if pos == 0 or neg == 0:
        raise MetricError("AUC undefined: targets contain a single class only")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = is_pos[order]

    # Cumulative counts at each distinct-score boundary, descending thresholds.
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    boundaries = np.concatenate([distinct, [len(scores) - 1]])
    tp_cum = np.cumsum(sorted_pos)[boundaries]
    fp_cum = np.cumsum(~sorted_pos)[boundaries]

    xs = [0.0] + [float(v) for v in fp_cum / neg]
    ys = [0.0] + [float(v) for v in tp_cum / pos]
    thresholds = [math.inf] + [float(v) for v in sorted_scores[boundaries]]
    points = list(zip(xs, ys))

    area = float(np.trapezoid(ys, xs))

    # Operating point at the 50% discrimination threshold; ties go positive.
    pred_pos = scores >= 0.5
    op_tp = int((pred_pos & is_pos).sum())
    op_fp = int((pred_pos & ~is_pos).sum())
    operating_point = (op_fp / neg, op_tp / pos)

    return RocCurve(points=points, auc=area, operating_point=operating_point,
                    thresholds=thresholds)


@dataclass
class MetricsReport:
    """Scalar evaluation metrics for one trained model run."""

    accuracy: float
    sensitivity: float | None = None
    specificity: float | None = None
    auc: float | None = None
    train_seconds: float | None = None
    per_class: dict[str, dict[str, float]] | None = None
    run_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("accuracy", "sensitivity", "specificity", "auc"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise MetricError(f"{name} must lie in [0, 1], got {value}")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "auc": self.auc,
            "train_seconds": self.train_seconds,
            "per_class": self.per_class,
            "run_seed": self.run_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d.get(k) for k in (
            "accuracy", "sensitivity", "specificity", "auc",
            "train_seconds", "per_class")}, run_seed=d.get("run_seed", 0))


AGGREGATED_FIELDS = ("accuracy", "sensitivity", "specificity", "auc", "train_seconds")


@dataclass
class AggregateReport:
    """Per-metric mean and sample standard deviation over repeated runs."""

    backbone: str
    task_kind: str
    num_runs: int
    mean: dict[str, float]
    std: dict[str, float] | None

    def __post_init__(self) -> None:
        if self.std is not None:
            for name, value in self.std.items():
                if value < 0:
                    raise MetricError(f"std[{name}] must be >= 0, got {value}")


def aggregate(
    reports: Sequence[MetricsReport], backbone: str = "", task_kind: str = ""
) -> AggregateReport:
    """Arithmetic mean over runs; sample std (n-1) when n >= 2, absent otherwise.

    Computed with exact rational arithmetic so identical runs aggregate to a
    std of exactly zero.
    """
    if not reports:
        raise MetricError("cannot aggregate an empty report list")
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    for name in AGGREGATED_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            continue
        means[name] = float(statistics.mean(values))
        if len(values) >= 2:
            stds[name] = float(statistics.stdev(values))
    return AggregateReport(
        backbone=backbone,
        task_kind=task_kind,
        num_runs=len(reports),
        mean=means,
        std=stds if len(reports) >= 2 else None,
    )
