import numpy as np
import pytest

from hypertab.errors import UndefinedMetricError
from hypertab.services.metrics import auc, mean_rank, rmse


def test_auc_perfect_and_reversed():
    y = np.array([1, 1, 2, 2])
    assert auc(np.array([0.1, 0.2, 0.8, 0.9]), y) == 1.0
    assert auc(np.array([0.9, 0.8, 0.2, 0.1]), y) == 0.0


def test_auc_ties_count_half():
    assert auc(np.array([0.5, 0.5]), np.array([1, 2])) == 0.5


def test_auc_multiclass_probability_matrix():
    y = np.array([1, 2, 3])
    scores = np.eye(3)
    assert auc(scores, y) == 1.0


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auc(np.array([0.1, 0.2]), np.array([2, 2]))


def test_rmse():
    assert rmse(np.array([1.0, 3.0]), np.array([0.0, 0.0])) == pytest.approx(np.sqrt(5.0))


def test_mean_rank_with_ties():
    # methods x tasks
    table = [[0.9, 0.7], [0.8, 0.7], [0.7, 0.6]]
    np.testing.assert_allclose(mean_rank(table), [1.25, 1.75, 3.0])
    np.testing.assert_allclose(mean_rank(table, higher_is_better=False), [2.75, 2.25, 1.0])


def test_auc_ignores_increasing_score_transforms():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=50)
    y = rng.integers(1, 3, size=50)
    y[:2] = [1, 2]
    assert auc(np.exp(3 * scores) + 1, y) == pytest.approx(auc(scores, y), abs=1e-12)


def test_mean_rank_ignores_per_task_increasing_transforms():
    table = np.array([[0.9, 0.7, 0.2], [0.8, 0.7, 0.5], [0.7, 0.6, 0.4]])
    transformed = np.column_stack([np.exp(3 * table[:, 0]) + 1, 10 * table[:, 1] - 4, table[:, 2] ** 3])
    np.testing.assert_allclose(mean_rank(transformed), mean_rank(table))
