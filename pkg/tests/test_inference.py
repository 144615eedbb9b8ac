import numpy as np
import pytest

from hypertab.errors import ConfigError, DataError
from hypertab.models import InferenceOptions
from hypertab.services.inference import (
    EnsembleModel,
    FineTuneConfig,
    feature_bag_mask,
    fine_tune,
    fit_task,
    load_ensemble,
    predict,
    predict_member,
    save_ensemble,
    standardize_targets,
)
from hypertab.services.hypernet import random_main_params
from hypertab.services.metrics import auc
from hypertab.services.tabular import one_hot_labels

D_MAIN = 8
RANDOM_FEATURES = 64


def _options(**overrides):
    values = dict(preprocessing="R", n_ens=2, finetune_steps=8, batch_size=64)
    values.update(overrides)
    return InferenceOptions(**values)


def test_random_init_ensemble_predicts_probabilities(blobs_task):
    model = fit_task(None, blobs_task, _options(init="random"), d_main=D_MAIN, random_features=RANDOM_FEATURES)
    test = blobs_task.split("test")
    proba = predict(model, blobs_task.X[test])

    assert model.n_ens == 2
    assert proba.shape == (test.size, blobs_task.n_classes)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_hypernetwork_init_without_network_is_rejected(blobs_task):
    with pytest.raises(ConfigError):
        fit_task(None, blobs_task, _options(), d_main=D_MAIN)


def test_random_init_needs_d_main(blobs_task):
    with pytest.raises(ConfigError):
        fit_task(None, blobs_task, _options(init="random"))


def test_generated_ensemble_with_retrieval(tiny_net, blobs_task):
    model = fit_task(tiny_net, blobs_task, _options(do_finetune=False), random_features=RANDOM_FEATURES)
    test = blobs_task.split("test")
    proba = predict(model, blobs_task.X[test])

    assert all(m.has_context for m in model.members)
    assert 0.0 <= auc(proba, blobs_task.y[test]) <= 1.0


def test_identical_members_average_exactly(tiny_net, blobs_task):
    model = fit_task(tiny_net, blobs_task, _options(n_ens=1, do_finetune=False), random_features=RANDOM_FEATURES)
    member = model.members[0]
    doubled = EnsembleModel(
        members=[member, member], task_kind=model.task_kind, n_classes=model.n_classes,
        n_features=model.n_features, alpha=model.alpha, tau=model.tau,
    )
    np.testing.assert_array_equal(predict(doubled, blobs_task.X), predict_member(model, member, blobs_task.X))


def test_predict_checks_feature_width(blobs_task):
    model = fit_task(None, blobs_task, _options(init="random", n_ens=1), d_main=D_MAIN, random_features=RANDOM_FEATURES)
    with pytest.raises(DataError):
        predict(model, blobs_task.X[:, :-1])


def test_ensemble_file_round_trip(tmp_path, tiny_net, small_suite):
    task = small_suite[3]
    model = fit_task(tiny_net, task, _options(finetune_steps=3), random_features=RANDOM_FEATURES)
    path = tmp_path / "ensemble.iltm"
    save_ensemble(model, path)
    restored = load_ensemble(path)

    np.testing.assert_array_equal(predict(restored, task.X), predict(model, task.X))


def test_regression_through_the_hypernetwork(tiny_net, regression_task):
    model = fit_task(tiny_net, regression_task, _options(regression_retrieval=True), random_features=RANDOM_FEATURES)
    test = regression_task.split("test")
    pred = predict(model, regression_task.X[test])

    assert model.task_kind == "regression"
    assert pred.shape == (test.size,)
    assert np.isfinite(pred).all()


def test_fine_tuning_never_worsens_held_out_loss():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, D_MAIN))
    T = one_hot_labels((X[:, 0] > 0).astype(np.int64) + 1, 2)
    theta = random_main_params(D_MAIN, 2, seed=1)
    cfg = FineTuneConfig(lr=1e-2, max_steps=30, patience=5, batch_size=32)
    _, report = fine_tune(theta, X[:60], T[:60], X[60:], T[60:], cfg)

    assert report.best_loss <= report.initial_loss
    assert report.steps <= 30


def test_feature_bag_mask_is_reproducible():
    a = feature_bag_mask(10, member=3, seed=7, fraction=0.8, enabled=True)
    np.testing.assert_array_equal(a, feature_bag_mask(10, member=3, seed=7, fraction=0.8, enabled=True))
    assert a.size == 8 and np.all(np.diff(a) > 0)
    np.testing.assert_array_equal(feature_bag_mask(10, 3, 7, 0.8, enabled=False), np.arange(10))
    np.testing.assert_array_equal(feature_bag_mask(1, 3, 7, 0.5, enabled=True), [0])


def test_standardize_constant_target():
    z, mean, scale = standardize_targets(np.full(4, 3.0))
    assert mean == 3.0 and scale == 1.0
    np.testing.assert_array_equal(z, 0.0)
