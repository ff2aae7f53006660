"""Classification metrics for imbalanced multi-class evaluation.

All three headline numbers treat classes equally regardless of frequency:

* balanced accuracy — mean per-class recall;
* macro F1 — unweighted mean of per-class F1 (defined as 0 when a class has
  neither correct predictions nor any precision/recall mass);
* G-Means — mean over classes of sqrt(recall * specificity), each class
  scored one-vs-rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ShapeError


@dataclass
class MetricsReport:
    balanced_accuracy: float
    macro_f1: float
    g_means: float
    accuracy: float
    per_class_recall: np.ndarray
    per_class_precision: np.ndarray
    per_class_f1: np.ndarray
    per_class_specificity: np.ndarray
    confusion: np.ndarray  # confusion[t, p] = count of true t predicted p

    def to_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "macro_f1": self.macro_f1,
            "g_means": self.g_means,
            "accuracy": self.accuracy,
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "per_class_specificity": self.per_class_specificity.tolist(),
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError("y_true and y_pred must have equal length")
    if y_true.size == 0:
        raise EvaluationError("cannot evaluate an empty prediction set")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise EvaluationError(f"{name} contains labels outside "
                                  f"[0, {num_classes})")
    flat = y_true * num_classes + y_pred
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def balanced_accuracy(y_true, y_pred, num_classes: int) -> float:
    """Mean per-class recall (cheap path used inside the training loop)."""
    conf = confusion_matrix(y_true, y_pred, num_classes)
    support = conf.sum(axis=1)
    if np.any(support == 0):
        missing = int(np.flatnonzero(support == 0)[0])
        raise EvaluationError(
            f"class {missing} has no ground-truth examples; balanced "
            "accuracy is undefined")
    return float((np.diag(conf) / support).mean())


def compute_metrics(y_true, y_pred, num_classes: int) -> MetricsReport:
    """Full metric report.  Every class in ``[0, num_classes)`` must appear
    in ``y_true``; otherwise the evaluation is ill-posed and raises
    :class:`EvaluationError`."""
    if num_classes < 2:
        raise EvaluationError("metrics require at least two classes")
    conf = confusion_matrix(y_true, y_pred, num_classes)
    support = conf.sum(axis=1)          # true count per class
    predicted = conf.sum(axis=0)        # predicted count per class
    total = conf.sum()
    if np.any(support == 0):
        missing = int(np.flatnonzero(support == 0)[0])
        raise EvaluationError(
            f"class {missing} has no ground-truth examples in the "
            "evaluation set")

    tp = np.diag(conf).astype(np.float64)
    recall = tp / support
    precision = np.divide(tp, predicted,
                          out=np.zeros(num_classes), where=predicted > 0)
    pr_sum = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr_sum,
                   out=np.zeros(num_classes), where=pr_sum > 0)
    fp = predicted - tp
    tn = total - support - fp
    specificity = tn / (tn + fp)
    g_means = float(np.sqrt(recall * specificity).mean())

    return MetricsReport(
        balanced_accuracy=float(recall.mean()),
        macro_f1=float(f1.mean()),
        g_means=g_means,
        accuracy=float(tp.sum() / total),
        per_class_recall=recall,
        per_class_precision=precision,
        per_class_f1=f1,
        per_class_specificity=specificity,
        confusion=conf,
    )
