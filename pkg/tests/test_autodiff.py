import numpy as np
import pytest

from hypertab.errors import NumericError, UnmarkedTensorError
from hypertab.services.autodiff import (
    Tape,
    finite_diff_check,
    flatten_params,
    grad,
    group_mean_matrix,
    unflatten_params,
)


def _mlp_loss(params, x, targets, mutations=(), with_grad=True):
    tape = Tape(mutations=mutations)
    W1 = tape.param(params["W1"], "W1")
    b1 = tape.param(params["b1"], "b1")
    W2 = tape.param(params["W2"], "W2")
    h = tape.row_l2_normalize(tape.relu(tape.affine(tape.constant(x), W1, b1)))
    logits = tape.affine(h, W2)
    loss = tape.ce_loss(logits, targets)
    return float(loss.value), (grad(tape, loss) if with_grad else None)


@pytest.fixture
def problem():
    rng = np.random.default_rng(0)
    params = {"W1": rng.normal(size=(6, 4)), "b1": rng.normal(size=6), "W2": rng.normal(size=(3, 6))}
    x = rng.normal(size=(10, 4))
    targets = np.eye(3)[rng.integers(3, size=10)]
    return params, x, targets


def test_gradient_matches_central_differences(problem):
    params, x, targets = problem
    _, analytic = _mlp_loss(params, x, targets)

    def f(p):
        return _mlp_loss(unflatten_params(p, params), x, targets, with_grad=False)[0]

    error = finite_diff_check(f, flatten_params(params), flatten_params(analytic))
    assert error < 1e-6


def test_small_gradient_errors_are_not_hidden():
    p = np.full(5, 1e-3)

    def f(q):
        return 0.5 * float(q @ q)

    assert finite_diff_check(f, p, p) < 1e-6
    assert finite_diff_check(f, p, 1.01 * p) > 5e-3


def test_relu_mask_mutation_breaks_the_gradient(problem):
    params, x, targets = problem
    _, honest = _mlp_loss(params, x, targets)
    _, mutated = _mlp_loss(params, x, targets, mutations=("relu_mask",))
    assert not np.allclose(honest["W1"], mutated["W1"])
    np.testing.assert_allclose(honest["W2"], mutated["W2"])


def test_unknown_mutation_is_rejected():
    with pytest.raises(NumericError):
        Tape(mutations=("swap_signs",))


def test_gradient_of_unmarked_tensor_is_rejected():
    tape = Tape()
    c = tape.constant(np.ones(3))
    loss = tape.half_sq_norm(c)
    with pytest.raises(UnmarkedTensorError):
        grad(tape, loss, wrt=[c])


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    a = tape.param(np.array([1.0, 2.0]), "a")
    tape.param(np.array([3.0]), "unused")
    grads = grad(tape, tape.half_sq_norm(a))
    np.testing.assert_array_equal(grads["a"], [1.0, 2.0])
    np.testing.assert_array_equal(grads["unused"], [0.0])


def test_mix_endpoints_are_exact():
    tape = Tape()
    a = tape.constant(np.array([[0.1, 0.7]]))
    b = tape.constant(np.array([[0.3, 0.2]]))
    np.testing.assert_array_equal(tape.mix(a, b, 0.0).value, a.value)
    np.testing.assert_array_equal(tape.mix(a, b, 1.0).value, b.value)


def test_group_mean_matrix_averages_empty_groups_over_all_rows():
    P = group_mean_matrix(np.array([0, 0, 2]), 3)
    np.testing.assert_allclose(P, [[0.5, 0.5, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.0, 0.0, 1.0]])


def test_standardize_rows_gradient():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 5))

    def run(x, with_grad=True):
        tape = Tape()
        xn = tape.param(x.reshape(4, 5), "x")
        loss = tape.half_sq_norm(tape.mul_const(tape.standardize_rows(xn), w))
        return float(loss.value), (grad(tape, loss)["x"] if with_grad else None)

    _, analytic = run(x0)
    error = finite_diff_check(lambda p: run(p, with_grad=False)[0], x0.ravel(), analytic.ravel())
    assert error < 1e-6


def test_unflatten_checks_size():
    template = {"a": np.zeros(2), "b": np.zeros((2, 2))}
    restored = unflatten_params(np.arange(6.0), template)
    np.testing.assert_array_equal(restored["a"], [0.0, 1.0])
    with pytest.raises(NumericError):
        unflatten_params(np.arange(7.0), template)
