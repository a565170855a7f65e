"""Confusion matrices and per-class precision / recall for image classifiers."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .survey import ImageRecord, SurveyDataError

__all__ = [
    "ConfusionMatrix",
    "MetricsReport",
    "MisclassificationProbs",
    "confusion_matrix",
    "precision_recall",
    "row_normalize",
    "identity_probs",
    "read_confusion_csv",
]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[a, b]`` = number of records with true label a predicted as b."""

    labels: tuple[str, ...]
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        counts = np.array(self.counts, dtype=np.int64)
        K = len(self.labels)
        if K < 1 or counts.shape != (K, K):
            raise ValueError(f"counts must be {K}x{K}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if len(set(self.labels)) != K:
            raise ValueError("duplicate labels")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def permuted(self, order: Sequence[int]) -> ConfusionMatrix:
        order = list(order)
        return ConfusionMatrix(
            tuple(self.labels[i] for i in order), self.counts[np.ix_(order, order)]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\pred", *self.labels])
            for label, row in zip(self.labels, self.counts.tolist()):
                writer.writerow([label, *row])


def confusion_matrix(records: Iterable[ImageRecord]) -> ConfusionMatrix:
    records = list(records)
    for row, rec in enumerate(records):
        if rec.label_pred is None:
            raise SurveyDataError(f"record {row} has no predicted label")
    labels = tuple(sorted({r.label_true for r in records} | {r.label_pred for r in records}))
    if not labels:
        raise SurveyDataError("no records")
    pos = {lab: k for k, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for rec in records:
        counts[pos[rec.label_true], pos[rec.label_pred]] += 1
    return ConfusionMatrix(labels, counts)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class rates; ``None`` marks a metric whose denominator is zero."""

    labels: tuple[str, ...]
    precision: dict[str, float | None]
    recall: dict[str, float | None]
    support: dict[str, int]
    accuracy: float

    @property
    def undefined(self) -> list[str]:
        return [
            f"{kind}({lab})"
            for lab in self.labels
            for kind, table in (("precision", self.precision), ("recall", self.recall))
            if table[lab] is None
        ]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "classes": [
                {
                    "label": lab,
                    "precision": self.precision[lab],
                    "recall": self.recall[lab],
                    "support": self.support[lab],
                }
                for lab in self.labels
            ],
        }


def precision_recall(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    tp = np.diag(counts)
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    total = int(counts.sum())
    precision, recall, support = {}, {}, {}
    for k, lab in enumerate(cm.labels):
        precision[lab] = float(tp[k] / col[k]) if col[k] else None
        recall[lab] = float(tp[k] / row[k]) if row[k] else None
        support[lab] = int(row[k])
    accuracy = float(tp.sum() / total) if total else 0.0
    return MetricsReport(cm.labels, precision, recall, support, accuracy)


@dataclass(frozen=True, eq=False)
class MisclassificationProbs:
    """Row-stochastic matrix: ``probs[a, b]`` = Pr(predicted b | true a).

    Rows are indexed by ``true_labels``, columns by ``pred_labels``.
    """

    true_labels: tuple[str, ...]
    pred_labels: tuple[str, ...]
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "true_labels", tuple(self.true_labels))
        object.__setattr__(self, "pred_labels", tuple(self.pred_labels))
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (len(self.true_labels), len(self.pred_labels)):
            raise ValueError("probs shape does not match labels")
        if (probs < 0).any() or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("probs must be row-stochastic")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def row(self, label: str) -> np.ndarray:
        try:
            return self.probs[self.true_labels.index(label)]
        except ValueError:
            raise KeyError(f"no misclassification row for label {label!r}") from None


def row_normalize(cm: ConfusionMatrix) -> MisclassificationProbs:
    counts = cm.counts.astype(float)
    sums = counts.sum(axis=1)
    keep = sums > 0
    if not keep.any():
        raise ValueError("empty confusion matrix")
    if not keep.all():
        dropped = [lab for lab, k in zip(cm.labels, keep) if not k]
        warnings.warn(f"dropping zero rows {dropped} from confusion matrix", stacklevel=2)
    probs = counts[keep] / sums[keep, None]
    true_labels = tuple(lab for lab, k in zip(cm.labels, keep) if k)
    return MisclassificationProbs(true_labels, cm.labels, probs)


def identity_probs(labels: Sequence[str]) -> MisclassificationProbs:
    labels = tuple(labels)
    return MisclassificationProbs(labels, labels, np.eye(len(labels)))


def read_confusion_csv(path) -> MisclassificationProbs:
    """Read a labelled square matrix (counts or probabilities) and row-normalize it.

    The layout is the one written by :meth:`ConfusionMatrix.to_csv`: a header
    row of predicted labels and one row per true label.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise SurveyDataError(f"{path}: empty confusion matrix")
    pred_labels = [c.strip() for c in rows[0][1:]]
    true_labels, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(pred_labels) + 1:
            raise SurveyDataError(f"{path}: line {line}: expected {len(pred_labels) + 1} fields")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise SurveyDataError(f"{path}: line {line}: non-numeric entry") from None
        true_labels.append(row[0].strip())
    mat = np.array(values)
    if (mat < 0).any():
        raise SurveyDataError(f"{path}: negative entries")
    sums = mat.sum(axis=1)
    keep = sums > 0
    if not keep.any():
        raise SurveyDataError(f"{path}: empty confusion matrix")
    if not keep.all():
        warnings.warn(f"{path}: dropping all-zero rows", stacklevel=2)
    return MisclassificationProbs(
        tuple(lab for lab, k in zip(true_labels, keep) if k),
        tuple(pred_labels),
        mat[keep] / sums[keep, None],
    )
