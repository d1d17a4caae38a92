"""Evaluation metrics: convergence delta, macro F1, NDCG and accuracy on ranking decrease.

Rankings are derived from probability vectors by sorting descending, with
ties resolved towards the lower category index.  The same ordering feeds the
argmax used by macro F1 and the per-position comparison of the ranking
accuracy, so every metric is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergences import as_prob_vector
from .errors import InvalidInputError, NumericDomainError, ShapeError

DEFAULT_THRESHOLD = 0.05


def rank_categories(p) -> np.ndarray:
    """Category indices ordered by probability, highest first; equal values keep index order."""
    p = np.asarray(p, dtype=np.float64)
    # stable sort on the negated values keeps ascending index among ties
    return np.argsort(-p, axis=-1, kind="stable")


def _paired(targets, predictions):
    t = np.atleast_2d(as_prob_vector(targets, "targets"))
    q = np.atleast_2d(as_prob_vector(predictions, "predictions"))
    if t.shape != q.shape:
        raise ShapeError(f"targets {t.shape} and predictions {q.shape} differ")
    if len(t) == 0:
        raise InvalidInputError("no instances")
    return t, q


def convergence_delta(history) -> np.ndarray:
    """Relative change |l(t) - l(t+1)| / l(t) between consecutive epochs."""
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 1 or len(h) < 2:
        raise InvalidInputError("loss history needs at least two epochs")
    if not np.all(np.isfinite(h)):
        raise InvalidInputError("loss history has non-finite entries")
    if np.any(h[:-1] == 0.0):
        t = int(np.flatnonzero(h[:-1] == 0.0)[0])
        raise NumericDomainError(f"loss is zero at epoch {t}; relative delta undefined")
    return np.abs(h[:-1] - h[1:]) / np.abs(h[:-1])


def epochs_to_converge(history, threshold: float = DEFAULT_THRESHOLD) -> int | None:
    """First epoch from which every later delta stays below ``threshold``, or None."""
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    delta = convergence_delta(history)
    above = np.flatnonzero(delta >= threshold)
    if len(above) == 0:
        return 0
    t = int(above[-1]) + 1
    return t if t < len(delta) else None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def from_labels(cls, true_labels, predicted_labels, k: int) -> "ConfusionCounts":
        y = np.asarray(true_labels)
        yhat = np.asarray(predicted_labels)
        tp = np.bincount(y[y == yhat], minlength=k)
        fp = np.bincount(yhat, minlength=k) - tp
        fn = np.bincount(y, minlength=k) - tp
        return cls(tp, fp, fn)

    def f1(self) -> np.ndarray:
        """Per-category F1; categories with no predictions and no support score 0."""
        # 2PR/(P+R) == 2TP/(2TP+FP+FN), and P+R = 0 exactly when TP = 0
        denom = 2 * self.tp + self.fp + self.fn
        return np.divide(2.0 * self.tp, denom, out=np.zeros(len(self.tp)), where=denom > 0)


def macro_f1(targets, predictions, k: int | None = None) -> float:
    t, q = _paired(targets, predictions)
    if k is None:
        k = t.shape[1]
    elif k != t.shape[1]:
        raise ShapeError(f"K={k} does not match vector length {t.shape[1]}")
    counts = ConfusionCounts.from_labels(rank_categories(t)[:, 0], rank_categories(q)[:, 0], k)
    return float(np.mean(counts.f1()))


def _dcg(gains: np.ndarray) -> np.ndarray:
    discounts = 1.0 / np.log2(np.arange(2, gains.shape[-1] + 2))
    return np.sum(gains * discounts, axis=-1)


def ndcg(targets, predictions) -> float:
    """Mean NDCG with linear gain (the true probability) and 1/log2(rank + 1) discount."""
    t, q = _paired(targets, predictions)
    placed = np.take_along_axis(t, rank_categories(q), axis=-1)
    ideal = np.take_along_axis(t, rank_categories(t), axis=-1)
    return float(np.mean(_dcg(placed) / _dcg(ideal)))


def accuracy_ranking_decrease(targets, predictions) -> float:
    """Position-discounted agreement of true and predicted category orderings.

    The best possible value is H_K / K (K-th harmonic number over K), not 1.
    """
    t, q = _paired(targets, predictions)
    k = t.shape[1]
    hits = rank_categories(t) == rank_categories(q)
    return float(np.mean(np.sum(hits / np.arange(1, k + 1), axis=-1) / k))


def max_accuracy_ranking(k: int) -> float:
    return float(np.sum(1.0 / np.arange(1, k + 1)) / k)
