"""Confusion-matrix accumulation and derived evaluation metrics.

Rows index ground truth, columns index predictions; pixels whose target is
the ignore value never enter the matrix. Matrices are mergeable by entrywise
sum, so evaluation can shard across workers in any order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyMatrixError,
    ShapeMismatchError,
)
from .taxonomy import IGNORE_VALUE


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = truth, cols = prediction

    @staticmethod
    def zeros(num_classes: int) -> "ConfusionMatrix":
        return ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Recall-oriented display form; zero-support rows stay zero."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts / sums, 0.0)
        return out


def accumulate(
    cm: ConfusionMatrix,
    pred: np.ndarray,
    target: np.ndarray,
    ignore_value: int = IGNORE_VALUE,
) -> ConfusionMatrix:
    """Return ``cm`` plus the counts of one (pred, target) pair."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred shape {pred.shape} != target shape {target.shape}")
    c = cm.num_classes
    valid = target != ignore_value
    t = target[valid].ravel()
    p = pred[valid].ravel()
    if np.any((t < 0) | (t >= c)):
        raise ShapeMismatchError("target contains labels outside the taxonomy")
    if np.any((p < 0) | (p >= c)):
        raise ShapeMismatchError("pred contains labels outside the taxonomy")
    add = np.bincount(t * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(cm.counts + add.astype(np.int64))


def merge(cm_a: ConfusionMatrix, cm_b: ConfusionMatrix) -> ConfusionMatrix:
    if cm_a.num_classes != cm_b.num_classes:
        raise DimensionMismatchError(
            f"cannot merge {cm_a.num_classes}-class with {cm_b.num_classes}-class matrix"
        )
    return ConfusionMatrix(cm_a.counts + cm_b.counts)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    f1_macro: float
    miou: float
    per_class_recall: np.ndarray     # NaN where undefined
    per_class_precision: np.ndarray
    per_class_f1: np.ndarray
    per_class_iou: np.ndarray
    # classes with zero ground-truth support, excluded from macro averages
    excluded_classes: tuple[int, ...] = ()

    def to_dict(self, class_names=None) -> dict:
        def listify(a):
            return [None if np.isnan(v) else float(v) for v in a]

        return {
            "confusion": self.confusion.counts.tolist(),
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "miou": self.miou,
            "per_class_recall": listify(self.per_class_recall),
            "per_class_precision": listify(self.per_class_precision),
            "per_class_f1": listify(self.per_class_f1),
            "per_class_iou": listify(self.per_class_iou),
            "excluded_classes": list(self.excluded_classes),
            "class_names": list(class_names) if class_names else None,
        }

    def save(self, path: str | Path, class_names=None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(class_names), indent=2), encoding="utf-8")
        return path


def load_report(path: str | Path) -> EvalReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))

    def arr(key):
        return np.array([np.nan if v is None else v for v in data[key]], dtype=np.float64)

    return EvalReport(
        confusion=ConfusionMatrix(np.asarray(data["confusion"], dtype=np.int64)),
        accuracy=data["accuracy"],
        f1_macro=data["f1_macro"],
        miou=data["miou"],
        per_class_recall=arr("per_class_recall"),
        per_class_precision=arr("per_class_precision"),
        per_class_f1=arr("per_class_f1"),
        per_class_iou=arr("per_class_iou"),
        excluded_classes=tuple(data["excluded_classes"]),
    )


def derive_metrics(cm: ConfusionMatrix) -> EvalReport:
    """Derive accuracy, per-class recall/precision/F1/IoU, and macro means.

    Classes with zero ground-truth support are excluded from the macro
    averages and reported in ``excluded_classes``. Per-class values with a
    zero denominator are NaN (undefined), never silently 0.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyMatrixError("confusion matrix holds no evaluated pixels")

    tp = np.diag(counts)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp

    def safe_div(num, den):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / den, np.nan)

    recall = safe_div(tp, tp + fn)
    precision = safe_div(tp, tp + fp)
    f1 = safe_div(2 * tp, 2 * tp + fp + fn)
    iou = safe_div(tp, tp + fp + fn)

    support = tp + fn
    with_support = support > 0
    excluded = tuple(int(i) for i in np.flatnonzero(~with_support))
    return EvalReport(
        confusion=cm,
        accuracy=float(tp.sum() / total),
        f1_macro=float(np.mean(f1[with_support])),
        miou=float(np.mean(iou[with_support])),
        per_class_recall=recall,
        per_class_precision=precision,
        per_class_f1=f1,
        per_class_iou=iou,
        excluded_classes=excluded,
    )
