"""Classification metrics: confusion matrix, accuracy, macro precision/recall/F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .types import NUM_CLASSES, ActivityLabel


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # (8, 8) ints; rows = truth, cols = prediction

    def per_class_accuracy(self) -> np.ndarray:
        """Diagonal over row sums; 0 for classes absent from the truth."""
        row_totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.where(row_totals > 0, np.diag(self.confusion) / row_totals, 0.0)
        return acc

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(preds: list[ActivityLabel], truth: list[ActivityLabel]) -> Metrics:
    """Count-based metrics; undefined per-class ratios are reported as 0."""
    if len(preds) != len(truth):
        raise LengthMismatch(f"{len(preds)} predictions for {len(truth)} labels")
    if not truth:
        raise LengthMismatch("need at least one evaluated sample")

    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for p, t in zip(preds, truth):
        confusion[int(t), int(p)] += 1

    precision = []
    recall = []
    f1 = []
    correct = 0
    for c in range(NUM_CLASSES):
        tp = int(confusion[c, c])
        fp = int(confusion[:, c].sum()) - tp
        fn = int(confusion[c, :].sum()) - tp
        correct += tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)

    return Metrics(
        accuracy=correct / len(truth),
        macro_precision=sum(precision) / NUM_CLASSES,
        macro_recall=sum(recall) / NUM_CLASSES,
        macro_f1=sum(f1) / NUM_CLASSES,
        confusion=confusion,
    )
