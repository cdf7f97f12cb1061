"""Accuracy, AUC, F1, precision and recall for binary crossing predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from pedfuse.errors import ContractError

METRIC_COLUMNS = ("accuracy", "auc", "f1", "precision", "recall")
METRIC_TITLES = ("Accuracy", "AUC", "F1 Score", "Precision", "Recall")


class UndefinedMetricError(ContractError):
    """The metric is undefined for the given labels (e.g. AUC with one class)."""


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list[float]:
        return [getattr(self, k) for k in METRIC_COLUMNS]


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    if scores.size == 0:
        raise ContractError("metrics need at least one prediction")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with a positive prediction iff score >= threshold."""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return (int(np.sum(pred & pos)), int(np.sum(pred & ~pos)), int(np.sum(~pred & ~pos)), int(np.sum(~pred & pos)))


def prf_accuracy(counts) -> tuple[float, float, float, float, list[str]]:
    """(precision, recall, f1, accuracy, degenerate) from confusion counts.

    A ratio whose denominator is zero is reported as 0 and named in
    ``degenerate``.
    """
    tp, fp, tn, fn = (int(c) for c in counts)
    total = tp + fp + tn + fn
    if total <= 0:
        raise ContractError("confusion counts are empty")
    degenerate = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return precision, recall, f1, (tp + tn) / total, degenerate


def auc_pair_count(scores, labels) -> tuple[int, int]:
    """Twice the Mann-Whitney U statistic and the number of (pos, neg) pairs.

    Exact integers; ``auc = u2 / (2 * pairs)``.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # group tied scores; each positive beats all negatives strictly below it, ties count half
    bounds = np.flatnonzero(np.diff(s)) + 1
    u2 = 0
    neg_below = 0
    for grp in np.split(y, bounds):
        pos = int(grp.sum())
        neg = grp.size - pos
        u2 += pos * (2 * neg_below + neg)
        neg_below += neg
    return u2, n_pos * n_neg


def auc_rank(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    u2, pairs = auc_pair_count(scores, labels)
    return u2 / (2 * pairs)


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    counts = confusion(scores, labels, threshold)
    precision, recall, f1, accuracy, degenerate = prf_accuracy(counts)
    try:
        auc = auc_rank(scores, labels)
    except UndefinedMetricError:
        auc = 0.0
        degenerate.append("auc")
    tp, fp, tn, fn = counts
    return MetricsReport(accuracy, auc, f1, precision, recall, tp, fp, tn, fn, threshold, degenerate)
