"""Confusion-matrix metrics: accuracy and one-vs-rest precision/recall.

Per-class ratios are averaged over classes ("macro", the default) or weighted by
class support ("weighted"). "micro" pools the counts and so equals accuracy. A class whose denominator is zero contributes 0 and
is listed in the ``flags`` of :func:`per_class`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MetricError, ParameterError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError(f"confusion matrix must be square, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ParameterError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_labels(cls, y_true, y_pred, classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise DimensionError(f"{y_true.shape} true labels vs {y_pred.shape} predictions")
        m = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(m, (y_true, y_pred), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def _require_samples(cm: ConfusionMatrix):
    if cm.total == 0:
        raise MetricError("metric undefined for an empty confusion matrix")


def accuracy(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    return float(np.trace(cm.counts)) / cm.total


def per_class(cm: ConfusionMatrix, kind: str) -> tuple[np.ndarray, list[int]]:
    """Per-class precision or recall and the classes whose denominator was zero."""
    _require_samples(cm)
    tp = np.diag(cm.counts).astype(np.float64)
    if kind == "precision":
        denom = cm.counts.sum(axis=0).astype(np.float64)
    elif kind == "recall":
        denom = cm.counts.sum(axis=1).astype(np.float64)
    else:
        raise ParameterError(f"unknown per-class metric {kind!r}")
    flags = [int(b) for b in np.flatnonzero(denom == 0)]
    ratio = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return ratio, flags


def _average(cm: ConfusionMatrix, kind: str, average: str) -> float:
    ratio, _ = per_class(cm, kind)
    if average == "macro":
        return float(ratio.mean())
    if average == "micro":
        return float(np.trace(cm.counts)) / cm.total
    if average == "weighted":
        support = cm.counts.sum(axis=1).astype(np.float64)
        return float(np.dot(ratio, support) / support.sum())
    raise ParameterError(f"unknown averaging {average!r}")


def precision(cm: ConfusionMatrix, average: str = "macro") -> float:
    return _average(cm, "precision", average)


def recall(cm: ConfusionMatrix, average: str = "macro") -> float:
    return _average(cm, "recall", average)


def summary(cm: ConfusionMatrix, average: str = "macro") -> dict:
    if cm.total == 0:
        return {"n": 0, "accuracy": float("nan"), "precision": float("nan"), "recall": float("nan")}
    return {
        "n": cm.total,
        "accuracy": accuracy(cm),
        "precision": precision(cm, average),
        "recall": recall(cm, average),
    }
