"""Shared fixtures: tiny synthetic tasks, task directories and an in-memory ledger."""

from typing import Optional

import numpy as np
import pytest

from hypertab.config import get_settings
from hypertab.database import reset_engine
from hypertab.services.hypernet import HyperNetConfig, HyperNetwork
from hypertab.services.synthetic import make_classification_suite, make_regression_suite, write_suite
from hypertab.services.tabular import (
    CLASSIFICATION,
    NUMERIC,
    ColumnSpec,
    Schema,
    TabularTask,
    default_splits,
)

TINY_D_MAIN = 8
TINY_RANDOM_FEATURES = 64


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Every test gets an in-memory ledger and a single worker."""
    monkeypatch.setenv("ILTM_DATABASE_URL", "sqlite:///:memory:")
    monkeypatch.setenv("ILTM_THREADS", "1")
    monkeypatch.setenv("ILTM_RUNS_DIR", str(tmp_path / "runs"))
    get_settings.cache_clear()
    reset_engine()
    yield
    reset_engine()
    get_settings.cache_clear()


def make_task(
    name: str,
    X: np.ndarray,
    y: Optional[np.ndarray] = None,
    n_classes: int = 2,
    dataset_id: Optional[str] = None,
    seed: int = 0,
) -> TabularTask:
    """Numeric classification task with default splits."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if y is None:
        y = (np.arange(n) % n_classes) + 1
    schema = Schema(
        columns=tuple(ColumnSpec(f"f{j}", NUMERIC) for j in range(d)),
        target="y",
        task_kind=CLASSIFICATION,
        target_vocabulary=tuple(str(k) for k in range(1, n_classes + 1)),
        dataset_id=dataset_id,
    )
    return TabularTask(name=name, X=X, y=y, n_classes=n_classes, splits=default_splits(n, seed=seed), schema=schema)


@pytest.fixture
def small_suite():
    """Four small classification tasks (blobs, xor, moons, blobs with a categorical column)."""
    return make_classification_suite(4, seed=3, d_range=(3, 5), k_choices=(2, 3), n_range=(80, 120))


@pytest.fixture
def blobs_task(small_suite):
    return small_suite[0]


@pytest.fixture
def regression_task():
    return make_regression_suite(1, seed=5, d_range=(5, 6), n_range=(100, 120))[0]


@pytest.fixture
def tiny_config():
    return HyperNetConfig(d_main=TINY_D_MAIN, hidden=16, k_max=4)


@pytest.fixture
def tiny_net(tiny_config):
    return HyperNetwork.init(tiny_config, seed=0)


@pytest.fixture
def task_dir(tmp_path, small_suite):
    return write_suite(small_suite, tmp_path / "tasks")


@pytest.fixture
def task_factory():
    return make_task
