import numpy as np
import pytest

from hypertab.errors import DataError
from hypertab.services.projection import (
    apply_projection,
    fit_projection,
    projection_from_state,
    projection_to_state,
    sample_omega,
)


@pytest.fixture
def psi():
    return np.random.default_rng(0).normal(size=(60, 6))


def test_fit_batch_columns_are_standardized(psi):
    params = fit_projection(psi, r=512, d_main=4, seed=1)
    out = apply_projection(params, psi)

    assert out.shape == (60, 4)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-4)


def test_any_input_width_maps_to_d_main():
    rng = np.random.default_rng(1)
    for m in (1, 7, 40):
        params = fit_projection(rng.normal(size=(30, m)), r=128, d_main=5, seed=0)
        assert apply_projection(params, rng.normal(size=(3, m))).shape == (3, 5)


def test_rank_deficient_batch_pads_zero_components():
    rng = np.random.default_rng(2)
    params = fit_projection(rng.normal(size=(3, 4)), r=64, d_main=8, seed=0)
    out = apply_projection(params, rng.normal(size=(5, 4)))

    assert params.rank <= 2
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out[:, params.rank:], 0.0)


def test_omega_is_regenerated_from_seed(psi):
    params = fit_projection(psi, r=64, d_main=4, seed=9)
    meta, tensors = projection_to_state(params)
    restored = projection_from_state(meta, tensors)

    np.testing.assert_array_equal(restored.omega, sample_omega(9, 6, 64))
    np.testing.assert_array_equal(apply_projection(restored, psi), apply_projection(params, psi))


def test_fit_needs_two_rows():
    with pytest.raises(DataError):
        fit_projection(np.zeros((1, 3)), r=16, d_main=2)


def test_apply_checks_width(psi):
    params = fit_projection(psi, r=32, d_main=2)
    with pytest.raises(DataError):
        apply_projection(params, np.zeros((2, 5)))


def test_fit_ignores_row_order(psi):
    perm = np.random.default_rng(3).permutation(psi.shape[0])
    query = np.random.default_rng(4).normal(size=(7, 6))
    a = apply_projection(fit_projection(psi, r=256, d_main=4, seed=5), query)
    b = apply_projection(fit_projection(psi[perm], r=256, d_main=4, seed=5), query)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
