import pytest

from hypertab.errors import DataError
from hypertab.models import InferenceOptions
from hypertab.services.evaluation import (
    EvaluationRow,
    configuration_set,
    rank_configurations,
    run_evaluation,
    write_ranks,
    write_results,
)

D_MAIN = 8
RANDOM_FEATURES = 64


def _row(task, configuration, value, metric="auc", seed=0):
    return EvaluationRow(task, configuration, seed, metric, value, 0.0, 0.0)


def test_ablation_suite_has_every_stage_for_both_preprocessings():
    configs = configuration_set("ablation", n_ens=4)
    assert len(configs) == 8
    base, full = configs["RX:Base"], configs["RX:+E+R+F"]
    assert base.n_ens == 1 and not base.feature_bagging and not base.do_retrieval and not base.do_finetune
    assert full.n_ens == 4 and full.feature_bagging and full.do_retrieval and full.do_finetune
    assert configs["R:+E+R"].preprocessing == "R"


def test_init_suite_and_overrides():
    configs = configuration_set("init", finetune_steps=4)
    assert set(configs) == {"hypernetwork", "hypernetwork+finetune", "random+finetune"}
    assert configs["random+finetune"].init == "random"
    assert all(opts.finetune_steps == 4 for opts in configs.values())


def test_hpo_suite_and_unknown_suite():
    configs = configuration_set("hpo", n_hpo=3, seed=1)
    assert list(configs) == ["default", "hpo-01", "hpo-02", "hpo-03"]
    with pytest.raises(DataError):
        configuration_set("nope")


def test_rank_configurations_uses_complete_cells():
    rows = [
        _row("t1", "a", 0.9), _row("t1", "b", 0.8), _row("t1", "c", 0.7),
        _row("t2", "a", 0.7), _row("t2", "b", 0.7), _row("t2", "c", 0.6),
        _row("t3", "a", 0.5),
    ]
    ranks = {name: (rank, n) for name, rank, n in rank_configurations(rows)}
    assert ranks == {"a": (1.25, 2), "b": (1.75, 2), "c": (3.0, 2)}


def test_lower_rmse_ranks_first():
    rows = [_row("r", "a", 2.0, metric="rmse"), _row("r", "b", 1.0, metric="rmse")]
    assert dict((n, r) for n, r, _ in rank_configurations(rows)) == {"a": 2.0, "b": 1.0}


def test_small_evaluation_run(tmp_path, small_suite):
    configs = {
        "plain": InferenceOptions(init="random", preprocessing="R", n_ens=1, do_finetune=False),
        "tuned": InferenceOptions(init="random", preprocessing="R", n_ens=1, finetune_steps=4),
    }
    result = run_evaluation(None, small_suite[:2], configs, seeds=(0, 1), d_main=D_MAIN, random_features=RANDOM_FEATURES)

    assert result.success and result.failed == 0
    assert len(result.rows) == 8
    assert all(row.metric == "auc" and 0.0 <= row.value <= 1.0 for row in result.rows)

    ranks = rank_configurations(result.rows)
    assert sum(rank for _, rank, _ in ranks) == pytest.approx(3.0)
    assert all(n == 4 for _, _, n in ranks)

    write_results(result.rows, tmp_path / "results.csv")
    write_ranks(ranks, tmp_path / "ranks.csv")
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 9
    assert (tmp_path / "ranks.csv").read_text().splitlines()[0] == "configuration,mean_rank,n_cells"


def test_generated_initialization_suite(tiny_net, blobs_task):
    configs = {
        name: opts.model_copy(update={"preprocessing": "R"})
        for name, opts in configuration_set("init", finetune_steps=4).items()
    }
    result = run_evaluation(tiny_net, [blobs_task], configs, random_features=RANDOM_FEATURES)
    assert result.success
    assert {row.configuration for row in result.rows} == set(configs)


def test_failing_cells_are_counted(small_suite):
    configs = {"needs-net": InferenceOptions(preprocessing="R", n_ens=1, do_finetune=False)}
    result = run_evaluation(None, small_suite[:1], configs, d_main=D_MAIN, random_features=RANDOM_FEATURES)
    assert not result.success
    assert result.failed == 1 and result.rows == []
