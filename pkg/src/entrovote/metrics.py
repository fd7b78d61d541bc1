"""Confusion matrices, per-class/macro metrics and one-vs-all ROC."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ClassAbsent, EmptyMatrix, LengthMismatch
from .labels import CLASSES, N_CLASSES, as_label_array, label_index

METRIC_NAMES = ("precision", "recall", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c) -> tuple:
        """(TP, FN, FP, TN) for class ``c``."""
        c = label_index(c)
        tp = int(self.counts[c, c])
        fn = int(self.counts[c, :].sum()) - tp
        fp = int(self.counts[:, c].sum()) - tp
        return tp, fn, fp, self.total - tp - fn - fp


def confusion_matrix(truth, pred, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    t, p = as_label_array(truth), as_label_array(pred)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_counts(tp, fn, fp, tn) -> tuple:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return precision, recall, specificity, f1


def class_metrics(cm: ConfusionMatrix, c) -> tuple:
    """(precision, recall, specificity, f1) of class ``c`` against the rest.

    F1 is the harmonic mean 2PR/(P+R). Any 0/0 ratio counts as 0.
    """
    return metrics_from_counts(*cm.one_vs_rest(c))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.trace(cm.counts)) / cm.total


def macro_average(per_class) -> dict:
    """Unweighted mean over classes of each metric in ``per_class``.

    ``per_class`` maps class name -> {metric: value}.
    """
    names = next(iter(per_class.values())).keys()
    return {m: float(np.mean([v[m] for v in per_class.values()])) for m in names}


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    per_class: dict
    macro: dict
    accuracy: float

    def to_dict(self, digits: int = 6) -> dict:
        def r(v):
            return float(f"{v:.{digits}g}")

        return {
            "averaging": "macro",
            "n_samples": self.confusion.total,
            "accuracy": r(self.accuracy),
            "macro": {k: r(v) for k, v in self.macro.items()},
            "per_class": {c: {k: r(v) for k, v in m.items()} for c, m in self.per_class.items()},
            "confusion_matrix": self.confusion.counts.tolist(),
            "classes": list(CLASSES),
        }


def metrics_report(truth, pred) -> MetricsReport:
    cm = confusion_matrix(truth, pred)
    per_class = {
        name: dict(zip(METRIC_NAMES, class_metrics(cm, i))) for i, name in enumerate(CLASSES)
    }
    return MetricsReport(cm, per_class, macro_average(per_class), accuracy(cm))


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *CLASSES])
        for name, row in zip(CLASSES, cm.counts):
            w.writerow([name, *(int(v) for v in row)])


@dataclass(frozen=True)
class RocCurve:
    label: int
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf for the (0, 0) anchor
    auc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def trapezoid_area(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def roc_one_vs_all(scores, truth, c) -> RocCurve:
    """ROC of class ``c`` versus the rest, sweeping its score column downward.

    Samples sharing a score cross the threshold together, so each distinct
    score contributes one vertex. ``scores`` is a PredictionMatrix or an
    N x C array.
    """
    c = label_index(c)
    probs = np.asarray(getattr(scores, "probs", scores), dtype=np.float64)
    y = as_label_array(truth)
    if probs.shape[0] != y.size:
        raise LengthMismatch(f"{probs.shape[0]} score rows vs {y.size} labels")
    if y.size == 0:
        raise EmptyMatrix("no samples")
    pos = y == c
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0:
        raise ClassAbsent(f"class {CLASSES[c]} absent from truth")

    s = probs[:, c]
    order = np.argsort(-s, kind="mergesort")
    s_sorted, pos_sorted = s[order], pos[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = np.cumsum(pos_sorted)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg] if n_neg else np.r_[0.0, np.zeros(ends.size)]
    if n_neg == 0:
        # no negatives: fpr is undefined, close the curve at (1, 1)
        fpr, tpr = np.r_[fpr, 1.0], np.r_[tpr, 1.0]
        thresholds = np.r_[np.inf, s_sorted[ends], -np.inf]
    else:
        thresholds = np.r_[np.inf, s_sorted[ends]]
    return RocCurve(c, fpr, tpr, thresholds, trapezoid_area(fpr, tpr))


def rank_auc(scores, truth, c) -> float:
    """P(score_pos > score_neg) + P(equal)/2 over all positive/negative pairs."""
    c = label_index(c)
    s = np.asarray(getattr(scores, "probs", scores), dtype=np.float64)[:, c]
    pos = as_label_array(truth) == c
    sp, sn = s[pos][:, None], s[~pos][None, :]
    return float(np.mean((sp > sn) + 0.5 * (sp == sn)))


def write_roc_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "fpr", "tpr", "threshold"])
        for curve in curves:
            for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
                w.writerow([CLASSES[curve.label], f"{f:.6g}", f"{t:.6g}", f"{th:.6g}"])
