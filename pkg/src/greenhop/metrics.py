"""Overlap and classification metrics plus batch summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInput(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a.astype(bool), b.astype(bool)


def dice(a, b) -> float:
    """2|A∩B| / (|A| + |B|); two empty masks agree perfectly (1.0)."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def iou(a, b) -> float:
    a, b = _pair(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def confusion_matrix(y_true, y_pred, classes=(1, 2, 3)) -> np.ndarray:
    """M[i, j] = number of samples of true class i predicted as class j."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidInput("label vectors must be 1-D and of equal length")
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        if t not in index or p not in index:
            raise InvalidInput(f"label outside {tuple(classes)}: true={t}, pred={p}")
        m[index[t], index[p]] += 1
    return m


def _matrix(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or np.any(m < 0):
        raise InvalidInput("confusion matrix must be square and nonnegative")
    return m


def accuracy(m) -> float:
    m = _matrix(m)
    n = m.sum()
    if n == 0:
        raise InvalidInput("confusion matrix is empty")
    return float(np.trace(m) / n)


def recall(m) -> np.ndarray:
    m = _matrix(m)
    support = m.sum(axis=1)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        raise InvalidInput(f"class index {int(empty[0])} has no samples; recall undefined")
    return np.diag(m) / support


def balanced_accuracy(m) -> float:
    return float(np.mean(recall(m)))


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    n_empty_pairs: int = 0

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize(values, n_empty_pairs: int = 0) -> Summary:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidInput("nothing to summarize")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return Summary(int(v.size), float(v.mean()), float(med), float(q1), float(q3), n_empty_pairs)
