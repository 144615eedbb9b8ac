import numpy as np
import pytest

from hypertab.errors import ConfigError, DataError
from hypertab.services.hypernet import (
    HyperNetwork,
    combined_logits,
    forward_main,
    generate_weights,
    generate_weights_regression,
    hypernet_from_state,
    hypernet_to_state,
    predict_proba,
    retrieval_logits,
    retrieval_regression,
)
from hypertab.services.tabular import one_hot_labels


@pytest.fixture
def gen_set():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 8))
    Y = one_hot_labels(np.arange(12) % 3 + 1, 3)
    return X, Y


def test_generated_weight_shapes(tiny_net, gen_set):
    X, Y = gen_set
    theta = generate_weights(tiny_net, X, Y)

    assert theta.W1.shape == (8, 8) and theta.b1.shape == (8,)
    assert theta.W2.shape == (8, 8) and theta.b2.shape == (8,)
    assert theta.W3.shape == (3, 8) and theta.b3.shape == (3,)
    H, logits = forward_main(theta, X)
    assert H.shape == (12, 8) and logits.shape == (12, 3)


def test_generation_ignores_row_order(tiny_net, gen_set):
    X, Y = gen_set
    perm = np.random.default_rng(1).permutation(12)
    a = generate_weights(tiny_net, X, Y).flat()
    b = generate_weights(tiny_net, X[perm], Y[perm]).flat()
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_generation_ignores_duplicated_rows(tiny_net, gen_set):
    X, Y = gen_set
    a = generate_weights(tiny_net, X, Y).flat()
    b = generate_weights(tiny_net, np.vstack([X, X]), np.vstack([Y, Y])).flat()
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_too_many_classes_is_rejected(tiny_net):
    X = np.zeros((6, 8))
    with pytest.raises(ConfigError):
        generate_weights(tiny_net, X, one_hot_labels(np.arange(6) % 5 + 1, 5))


def test_generation_width_is_checked(tiny_net, gen_set):
    _, Y = gen_set
    with pytest.raises(DataError):
        generate_weights(tiny_net, np.zeros((12, 5)), Y)


def test_regression_generation_has_one_output(tiny_net, gen_set):
    X, _ = gen_set
    theta = generate_weights_regression(tiny_net, X, np.linspace(-1, 1, 12))
    assert theta.n_outputs == 1


def test_combined_logits_endpoints_are_exact():
    rng = np.random.default_rng(2)
    net, ret = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    np.testing.assert_array_equal(combined_logits(net, ret, 0.0), net)
    np.testing.assert_array_equal(combined_logits(net, ret, 1.0), ret)
    np.testing.assert_allclose(combined_logits(net, ret, 0.5), (net + ret) / 2)
    with pytest.raises(ConfigError):
        combined_logits(net, ret, 1.5)


def test_retrieval_counts_similarity_per_label():
    H_c = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    Y_c = one_hot_labels(np.array([1, 2, 1]), 2)
    out = retrieval_logits(np.array([[3.0, 0.0]]), H_c, Y_c, tau=2.0)
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-9)
    with pytest.raises(ConfigError):
        retrieval_logits(H_c, H_c, Y_c, tau=0.0)


def test_regression_retrieval_ignores_dissimilar_context():
    H_c = np.array([[1.0, 0.0], [-1.0, 0.0]])
    out = retrieval_regression(np.array([[1.0, 0.0]]), H_c, np.array([2.0, -7.0]))
    np.testing.assert_allclose(out, [[2.0]], atol=1e-9)


def test_probabilities_sum_to_one():
    p = predict_proba(np.array([[1000.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert np.isfinite(p).all()


def test_state_round_trip(tiny_net, gen_set):
    meta, tensors = hypernet_to_state(tiny_net)
    restored = hypernet_from_state(meta, tensors)
    X, Y = gen_set
    np.testing.assert_array_equal(generate_weights(restored, X, Y).flat(), generate_weights(tiny_net, X, Y).flat())


def test_state_with_wrong_shapes_is_rejected(tiny_net):
    meta, tensors = hypernet_to_state(tiny_net)
    meta = dict(meta, hidden=meta["hidden"] + 1)
    with pytest.raises(DataError):
        hypernet_from_state(meta, tensors)


def test_init_is_seeded(tiny_config):
    a = HyperNetwork.init(tiny_config, seed=4)
    b = HyperNetwork.init(tiny_config, seed=4)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
