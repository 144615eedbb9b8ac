import numpy as np

from hypertab.services.gbdt import (
    GbdtConfig,
    dynamic_fit_split,
    embed,
    fit_gbdt,
    flavor_config,
    gbdt_from_state,
    gbdt_to_state,
    leaf_indices,
    predict_gbdt,
)


def _xor(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(np.int64) + 1
    return X, y


def test_embedding_rows_sum_to_tree_count():
    X, y = _xor()
    model = fit_gbdt(X, y, 2, GbdtConfig(max_rounds=10, depth=3), seed=0)
    G = embed(model, X).toarray()

    assert G.shape == (200, model.n_leaves)
    np.testing.assert_array_equal(G.sum(axis=1), np.full(200, model.n_trees))
    assert set(np.unique(G)) <= {0.0, 1.0}


def test_boosting_separates_a_threshold_rule():
    X = np.random.default_rng(4).normal(size=(300, 3))
    y = (X[:, 1] > 0.3).astype(np.int64) + 1
    model = fit_gbdt(X, y, 2, GbdtConfig(max_rounds=20, depth=2, val_fraction=0.0), seed=0)
    accuracy = np.mean(np.argmax(predict_gbdt(model, X), axis=1) + 1 == y)
    assert accuracy > 0.9


def test_depth_two_fits_xor_corners():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([1, 2, 2, 1])
    model = fit_gbdt(X, y, 2, GbdtConfig(max_rounds=20, depth=2, val_fraction=0.0), seed=0)
    np.testing.assert_array_equal(np.argmax(predict_gbdt(model, X), axis=1) + 1, y)


def test_multiclass_uses_one_tree_per_class_per_round():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(90, 2))
    y = np.repeat([1, 2, 3], 30)
    model = fit_gbdt(X, y, 3, GbdtConfig(max_rounds=5, depth=2, val_fraction=0.0), seed=0)
    assert model.trees_per_round == 3
    assert model.n_trees == 3 * model.n_rounds
    np.testing.assert_allclose(predict_gbdt(model, X).sum(axis=1), 1.0)


def test_single_class_gives_single_leaf_trees():
    X = np.random.default_rng(2).normal(size=(20, 2))
    model = fit_gbdt(X, np.ones(20, dtype=np.int64), 2, GbdtConfig(max_rounds=5))
    assert model.n_leaves == model.n_trees
    np.testing.assert_array_equal(embed(model, X).toarray().sum(axis=1), model.n_trees)


def test_missing_values_are_routed():
    X, y = _xor(100)
    X[::7, 0] = np.nan
    model = fit_gbdt(X, y, 2, flavor_config("C", max_rounds=5), seed=0)
    leaves = leaf_indices(model, X)
    assert leaves.shape == (100, model.n_trees)
    assert (leaves >= 0).all()


def test_oblivious_trees_have_power_of_two_leaves():
    X, y = _xor(150)
    model = fit_gbdt(X, y, 2, flavor_config("C", max_rounds=4), seed=0)
    for count in model.leaf_counts:
        assert count & (count - 1) == 0


def test_regression_uses_squared_loss():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 2))
    y = 3.0 * X[:, 0] + rng.normal(scale=0.1, size=120)
    model = fit_gbdt(X, y, 0, GbdtConfig(max_rounds=40, depth=3, val_fraction=0.0), seed=0)
    assert model.loss == "squared"
    assert np.sqrt(np.mean((predict_gbdt(model, X) - y) ** 2)) < np.std(y)


def test_state_round_trip_preserves_routing():
    X, y = _xor()
    model = fit_gbdt(X, y, 2, GbdtConfig(max_rounds=5, depth=3), seed=0)
    meta, tensors = gbdt_to_state(model)
    restored = gbdt_from_state(meta, tensors)
    np.testing.assert_array_equal(leaf_indices(restored, X), leaf_indices(model, X))


def test_dynamic_fit_split():
    small = dynamic_fit_split(1999, seed=0)
    np.testing.assert_array_equal(small.gbdt_fit, small.hypernet_pool)

    large = dynamic_fit_split(3000, seed=0)
    assert large.gbdt_fit.size == 1500 and large.hypernet_pool.size == 1500
    assert np.intersect1d(large.gbdt_fit, large.hypernet_pool).size == 0

    entire = dynamic_fit_split(3000, seed=0, mode="entire")
    assert entire.gbdt_fit.size == entire.hypernet_pool.size == 3000
