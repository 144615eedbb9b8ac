import numpy as np
import pytest

from hypertab.errors import DataError
from hypertab.services.hypernet import HyperNetwork
from hypertab.services.importer import cache_key, fit_task_embedding
from hypertab.services.meta_train import (
    Checkpoint,
    MetaTrainConfig,
    MetaTrainer,
    draw_gradient,
    load_checkpoint,
    meta_step,
    meta_validate,
    sample_subsets,
    save_checkpoint,
    select_checkpoint,
)
from hypertab.services.optim import Optimizer
from hypertab.services.tabular import MetaCollection

TINY_RANDOM_FEATURES = 64


def _collection(tasks, role):
    embeddings = {t.name: fit_task_embedding(t, cache_key(t.name, "R", 0)) for t in tasks}
    return MetaCollection(tasks=list(tasks), role=role, embeddings=embeddings)


def _config(**overrides):
    values = dict(
        accumulation=2, lr=1e-3, max_steps=2, batch_gen=32, batch_grad=32,
        val_period=1, random_features=TINY_RANDOM_FEATURES, workers=1,
    )
    values.update(overrides)
    return MetaTrainConfig(**values)


def test_sample_subsets_are_disjoint():
    rng = np.random.default_rng(0)
    gen, grad = sample_subsets(np.arange(50), 40, 40, rng)
    assert gen.size == 25 and grad.size == 25
    assert np.intersect1d(gen, grad).size == 0

    gen, grad = sample_subsets(np.arange(10, 20), 2, 3, rng)
    assert gen.size == 2 and grad.size == 3
    assert set(gen) | set(grad) <= set(range(10, 20))


def test_select_checkpoint():
    assert select_checkpoint([0.6, 0.8, 0.7]) == 1
    assert select_checkpoint([0.7, 0.7]) == 0
    assert select_checkpoint([0.1, 0.2, 0.3]) == 2
    assert select_checkpoint([float("nan"), 0.5]) == 1
    with pytest.raises(DataError):
        select_checkpoint([])


def test_step_applies_the_summed_draw_gradients(small_suite, tiny_net):
    collection = _collection(small_suite[:3], "meta-train")
    cfg = _config(accumulation=3, optimizer="sgd", lr=1.0)

    draws = [draw_gradient(tiny_net, collection, cfg, 0, a) for a in range(3)]
    updated, report = meta_step(tiny_net, Optimizer(kind="sgd", lr=1.0), collection, cfg, 0)

    assert report.n_used == 3 and report.n_skipped == 0
    for name, value in tiny_net.params.items():
        expected = value - sum(d.grads[name] for d in draws)
        np.testing.assert_allclose(updated.params[name], expected, rtol=0, atol=1e-10)


def test_draws_are_reproducible(small_suite, tiny_net):
    collection = _collection(small_suite[:2], "meta-train")
    a = draw_gradient(tiny_net, collection, _config(), 5, 1)
    b = draw_gradient(tiny_net, collection, _config(), 5, 1)
    assert a.task == b.task and a.loss == b.loss
    np.testing.assert_array_equal(a.gen_rows, b.gen_rows)


def test_meta_validate_scores_in_unit_interval(small_suite, tiny_net):
    score = meta_validate(tiny_net, _collection(small_suite[:2], "meta-val"), _config())
    assert 0.0 <= score <= 1.0


def test_checkpoint_round_trip_is_byte_identical(tmp_path, tiny_net):
    optimizer = Optimizer(lr=1e-3)
    params = optimizer.step(tiny_net.params, {k: np.ones_like(v) for k, v in tiny_net.params.items()})
    net = HyperNetwork(config=tiny_net.config, params=params)
    first = tmp_path / "a.iltm"
    save_checkpoint(Checkpoint(net=net, optimizer=optimizer, step=1, history=[(0, 0.5), (1, 0.75)]), first)

    loaded = load_checkpoint(first)
    second = tmp_path / "b.iltm"
    save_checkpoint(loaded, second)

    assert loaded.step == 1 and loaded.history == [(0, 0.5), (1, 0.75)]
    assert first.read_bytes() == second.read_bytes()


def _run(small_suite, tiny_config, out_dir):
    trainer = MetaTrainer(
        _config(), tiny_config,
        train=_collection(small_suite[:3], "meta-train"),
        val=_collection(small_suite[3:], "meta-val"),
        out_dir=out_dir,
    )
    return trainer.run()


def _scores(path):
    return [line.split(",")[:2] for line in path.read_text().splitlines()]


def test_trainer_keeps_best_checkpoint_and_is_deterministic(tmp_path, small_suite, tiny_config):
    first = _run(small_suite, tiny_config, tmp_path / "one")
    second = _run(small_suite, tiny_config, tmp_path / "two")

    assert first.success and first.steps == 2
    best = tmp_path / "one" / "best.iltm"
    assert best.exists()
    assert len((tmp_path / "one" / "meta_val.csv").read_text().splitlines()) == 4
    assert load_checkpoint(best).step == first.best_step
    assert best.read_bytes() == (tmp_path / "two" / "best.iltm").read_bytes()
    assert _scores(tmp_path / "one" / "meta_val.csv") == _scores(tmp_path / "two" / "meta_val.csv")


def test_trainer_rejects_empty_collection(tmp_path, tiny_config):
    with pytest.raises(DataError):
        MetaTrainer(_config(), tiny_config, MetaCollection(tasks=[], role="meta-train"), tmp_path)
