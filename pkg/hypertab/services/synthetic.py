"""Synthetic task suites for desk-scale meta-training, evaluation and tests."""

import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.datasets import make_blobs, make_friedman1, make_moons, make_regression

from hypertab.services.tabular import (
    CATEGORICAL,
    CLASSIFICATION,
    NUMERIC,
    REGRESSION,
    ColumnSpec,
    Schema,
    TabularTask,
    default_splits,
    save_task,
)

logger = logging.getLogger(__name__)

CLASSIFICATION_FAMILIES = ("blobs", "xor", "moons")
REGRESSION_FAMILIES = ("friedman", "linear")
CATEGORY_VOCABULARY = ("a", "b", "c")
MISSING_RATE = 0.02


def _blobs(n: int, d: int, k: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, int]:
    X, y = make_blobs(
        n_samples=n, n_features=d, centers=k,
        cluster_std=float(rng.uniform(1.0, 3.0)), random_state=int(rng.integers(2 ** 31)),
    )
    return X, y, k


def _xor(n: int, d: int, k: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, int]:
    """Quadrant of the first two columns decides the class; k=2 is the sign-product rule."""
    X = rng.normal(size=(n, d))
    quadrant = (X[:, 0] > 0).astype(np.int64) + 2 * (X[:, 1] > 0).astype(np.int64)
    if k == 2:
        y = (quadrant == 1) | (quadrant == 2)
    else:
        y = quadrant % k
    return X, y.astype(np.int64), k


def _moons(n: int, d: int, k: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, int]:
    """Two interleaved moons in the first two columns, noise columns after them."""
    moons, y = make_moons(n_samples=n, noise=0.2, random_state=int(rng.integers(2 ** 31)))
    noise = rng.normal(size=(n, max(0, d - 2)))
    return np.hstack([moons, noise])[:, :max(d, 2)], y, 2


_GENERATORS = {"blobs": _blobs, "xor": _xor, "moons": _moons}


def _add_categorical(X: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, ColumnSpec]:
    codes = rng.integers(len(CATEGORY_VOCABULARY), size=X.shape[0]).astype(np.float64)
    return np.hstack([X, codes[:, None]]), ColumnSpec("cat", CATEGORICAL, CATEGORY_VOCABULARY)


def _inject_missing(X: np.ndarray, n_numeric: int, rng: np.random.Generator) -> np.ndarray:
    X = X.copy()
    hole = rng.random((X.shape[0], n_numeric)) < MISSING_RATE
    X[:, :n_numeric][hole] = np.nan
    return X


def make_classification_suite(
    n_tasks: int,
    seed: int = 0,
    d_range: Tuple[int, int] = (4, 64),
    k_choices: Sequence[int] = (2, 3, 4),
    n_range: Tuple[int, int] = (200, 2000),
    prefix: str = "cls",
) -> List[TabularTask]:
    """
    Blobs, XOR and moons tasks in rotation.

    Every fourth task gets a categorical column and 2% missing numeric cells.
    """
    tasks = []
    for i in range(n_tasks):
        rng = np.random.default_rng([seed, i])
        family = CLASSIFICATION_FAMILIES[i % len(CLASSIFICATION_FAMILIES)]
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        k = int(rng.choice(list(k_choices)))
        X, y, k = _GENERATORS[family](n, d, k, rng)

        columns = [ColumnSpec(f"f{j}", NUMERIC) for j in range(X.shape[1])]
        if i % 4 == 3:
            X = _inject_missing(X, X.shape[1], rng)
            X, cat = _add_categorical(X, rng)
            columns.append(cat)

        schema = Schema(
            columns=tuple(columns), target="y", task_kind=CLASSIFICATION,
            target_vocabulary=tuple(str(c) for c in range(1, k + 1)),
        )
        tasks.append(TabularTask(
            name=f"{prefix}-{family}-{i:03d}", X=X, y=np.asarray(y) + 1, n_classes=k,
            splits=default_splits(n, seed=seed + i), schema=schema, source="synthetic",
        ))
    logger.debug(f"Generated {n_tasks} synthetic classification tasks")
    return tasks


def make_regression_suite(
    n_tasks: int,
    seed: int = 0,
    d_range: Tuple[int, int] = (5, 32),
    n_range: Tuple[int, int] = (200, 2000),
    prefix: str = "reg",
) -> List[TabularTask]:
    """Friedman-style and linear-plus-noise regression tasks in rotation."""
    tasks = []
    for i in range(n_tasks):
        rng = np.random.default_rng([seed, i, 7])
        family = REGRESSION_FAMILIES[i % len(REGRESSION_FAMILIES)]
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        state = int(rng.integers(2 ** 31))
        if family == "friedman":
            X, y = make_friedman1(n_samples=n, n_features=max(d, 5), noise=1.0, random_state=state)
        else:
            X, y = make_regression(n_samples=n, n_features=d, n_informative=min(d, 5), noise=10.0, random_state=state)

        schema = Schema(
            columns=tuple(ColumnSpec(f"f{j}", NUMERIC) for j in range(X.shape[1])),
            target="y", task_kind=REGRESSION,
        )
        tasks.append(TabularTask(
            name=f"{prefix}-{family}-{i:03d}", X=X, y=y, n_classes=0,
            splits=default_splits(n, seed=seed + i), schema=schema, source="synthetic",
        ))
    logger.debug(f"Generated {n_tasks} synthetic regression tasks")
    return tasks


def write_suite(tasks: Sequence[TabularTask], directory: Path) -> Path:
    """Write every task as CSV, schema and split files."""
    directory = Path(directory)
    for task in tasks:
        save_task(task, directory)
    logger.info(f"Wrote {len(tasks)} tasks to {directory}")
    return directory
