import numpy as np
import pytest

from hypertab.errors import DataError
from hypertab.services.gbdt import GbdtConfig
from hypertab.services.preprocess import (
    apply_robust,
    build_psi,
    fit_psi,
    fit_robust,
    psi_from_state,
    psi_to_state,
    robust_scale,
    smooth_clip,
)
from hypertab.services.tabular import CATEGORICAL, CLASSIFICATION, NUMERIC, ColumnSpec, Schema


def _schema():
    return Schema(
        columns=(ColumnSpec("a", NUMERIC), ColumnSpec("c", CATEGORICAL, ("x", "y", "z"))),
        target="t",
        task_kind=CLASSIFICATION,
    )


def test_smooth_clip_is_odd_and_bounded():
    z = np.array([-1e300, -5.0, 0.0, 1.0, 1e300])
    out = smooth_clip(z)
    assert np.all(np.abs(out) < 3.0 + 1e-12)
    np.testing.assert_allclose(smooth_clip(-z), -out)
    assert out[2] == 0.0
    assert np.all(np.diff(out) > 0)


def test_robust_scale_fallbacks():
    assert robust_scale(np.array([1.0, 2.0, 3.0, 4.0, 5.0])) == pytest.approx(2.0)
    assert robust_scale(np.array([0.0, 0.0, 0.0, 0.0, 10.0])) == pytest.approx(np.std([0.0, 0.0, 0.0, 0.0, 10.0]))
    assert robust_scale(np.array([4.0, 4.0])) == 1.0


def test_robust_representation_layout():
    X = np.array([[1.0, 0.0], [2.0, 2.0], [3.0, 1.0], [np.nan, -1.0], [5.0, np.nan]])
    state = fit_robust(X, _schema())
    out = apply_robust(state, X)

    assert out.shape == (5, 4)
    assert state.median[0] == 2.5
    # Categorical one-hot; unknown (-1) and missing give a zero segment.
    np.testing.assert_array_equal(out[:3, 1:], [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(out[3:, 1:], 0.0)
    # Missing numeric imputed as 0 before scaling.
    assert out[3, 0] == pytest.approx(smooth_clip(np.array([(0.0 - 2.5) / state.scale[0]]))[0])


def test_apply_robust_checks_width():
    state = fit_robust(np.zeros((3, 2)), _schema())
    with pytest.raises(DataError):
        apply_robust(state, np.zeros((3, 3)))


def test_rx_width_is_robust_plus_leaves(blobs_task):
    train = blobs_task.split("train")
    psi = fit_psi(
        "RX", blobs_task.X[train], blobs_task.y[train], blobs_task.n_classes, blobs_task.schema,
        gbdt_config=GbdtConfig(max_rounds=5, depth=3), seed=0,
    )
    out = build_psi(psi, blobs_task.X)
    assert out.shape == (blobs_task.n_rows, psi.robust.width + psi.gbdt.n_leaves)
    np.testing.assert_array_equal(out[:, psi.robust.width:].sum(axis=1), psi.gbdt.n_trees)


def test_feature_bag_columns_restrict_the_robust_path(blobs_task):
    psi = fit_psi("R", blobs_task.X, blobs_task.y, blobs_task.n_classes, blobs_task.schema, robust_columns=[0, 2])
    assert build_psi(psi, blobs_task.X).shape == (blobs_task.n_rows, 2)


def test_state_round_trip(blobs_task):
    psi = fit_psi(
        "RC", blobs_task.X, blobs_task.y, blobs_task.n_classes, blobs_task.schema,
        gbdt_config=GbdtConfig(max_rounds=3, depth=2, oblivious=True),
    )
    meta, tensors = psi_to_state(psi)
    restored = psi_from_state(meta, tensors)
    np.testing.assert_array_equal(build_psi(restored, blobs_task.X), build_psi(psi, blobs_task.X))


def test_apply_robust_is_monotone_per_numeric_column():
    rng = np.random.default_rng(0)
    X_fit = np.column_stack([rng.normal(scale=20.0, size=40), rng.integers(0, 3, size=40)])
    state = fit_robust(X_fit, _schema())

    query = np.column_stack([np.linspace(-200.0, 200.0, 101), np.zeros(101)])
    out = apply_robust(state, query)
    assert np.all(np.diff(out[:, 0]) > 0)
