"""Evaluation metrics: AUC, RMSE and cross-task mean ranks."""

import logging
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from hypertab.errors import DataError, UndefinedMetricError

logger = logging.getLogger(__name__)


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scores: np.ndarray, y: np.ndarray) -> float:
    """
    Area under the ROC curve.

    scores is either N x K (one column per class, labels 1..K) or a length-N
    vector scoring class 2 against class 1. Multiclass inputs are reduced to
    the macro average of one-vs-rest AUCs over the classes present in y.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or scores.shape[0] != y.shape[0]:
        raise DataError(f"auc: scores {scores.shape} and labels {y.shape} do not align")

    present = np.unique(y)
    if y.size < 2 or present.size < 2:
        raise UndefinedMetricError(f"auc is undefined with classes {present.tolist()}")

    if scores.ndim == 1:
        if present.size != 2:
            raise DataError("auc: 1-D scores need exactly two classes")
        return _binary_auc(scores, y == present[-1])

    if present.size == 2 and scores.shape[1] == 2:
        return _binary_auc(scores[:, present[-1] - 1], y == present[-1])

    values = [_binary_auc(scores[:, k - 1], y == k) for k in present]
    return float(np.mean(values))


def rmse(pred: np.ndarray, y: np.ndarray) -> float:
    """Root mean squared error."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if pred.shape != y.shape or y.size == 0:
        raise DataError(f"rmse: length mismatch ({pred.size} vs {y.size})")
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def mean_rank(score_table: Sequence[Sequence[float]], higher_is_better: bool = True) -> np.ndarray:
    """
    Average rank per method over tasks.

    score_table is methods x tasks; rank 1 is best and ties share the
    average of the ranks they span.
    """
    table = np.asarray(score_table, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise DataError("mean_rank: empty score table")
    if np.isnan(table).any():
        raise DataError("mean_rank: score table has missing cells")

    keyed = -table if higher_is_better else table
    ranks = rankdata(keyed, method="average", axis=0)
    return ranks.mean(axis=1)
