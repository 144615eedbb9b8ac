import csv

import numpy as np
import pytest

from hypertab.models import DedupeConfig
from hypertab.services.dedupe import (
    TaskHandle,
    clean_keywords,
    levenshtein_similarity,
    load_handles,
    read_eval_list,
    run_pipeline,
    sample_leak_check,
    sanitize_name,
    summarize,
    token_sort_ratio,
    write_discard_file,
)
from hypertab.services.synthetic import write_suite


def test_sanitize_name():
    assert sanitize_name("Credit-G ") == "credit-g"
    assert sanitize_name("Heart  Disease!!") == "heart-disease"
    assert sanitize_name(sanitize_name("A__b..C")) == sanitize_name("A__b..C")


def test_clean_keywords():
    assert clean_keywords("airlines_small_2016_processed") == "airlines"
    assert clean_keywords("dataset-version-2") == "dataset"
    assert clean_keywords("splice") == "splice"


def test_levenshtein_similarity():
    assert levenshtein_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)
    assert levenshtein_similarity("", "abc") == 0.0
    assert levenshtein_similarity("same", "same") == 1.0


def test_token_sort_ignores_word_order():
    assert token_sort_ratio("disease-heart", "heart-disease") == 1.0
    assert token_sort_ratio("blood transfusion", "transfusion_blood") == 1.0


def _rng_task(factory, name, n, d, seed, dataset_id=None):
    X = np.random.default_rng(seed).normal(size=(n, d))
    return factory(name, X, dataset_id=dataset_id)


@pytest.fixture
def evals(task_factory):
    return [
        _rng_task(task_factory, "credit-g", 30, 3, 1),
        _rng_task(task_factory, "vehicle", 846, 19, 2),
        _rng_task(task_factory, "heart-disease", 25, 4, 3),
    ]


@pytest.fixture
def candidates(task_factory, evals):
    credit = evals[0]
    fresh = np.random.default_rng(99).normal(size=(6, 3))
    leaky = task_factory("leaky", np.vstack([credit.X[:, [2, 0, 1]], fresh]))
    return [
        _rng_task(task_factory, "credit-g", 31, 3, 10),
        _rng_task(task_factory, "Credit_G_small", 32, 3, 11),
        _rng_task(task_factory, "credit-g-v2", 33, 3, 12),
        _rng_task(task_factory, "vehicl", 34, 3, 13),
        _rng_task(task_factory, "disease-heart", 35, 3, 14),
        _rng_task(task_factory, "zephyr", 846, 19, 15),
        _rng_task(task_factory, "tiny", 5, 3, 16),
        leaky,
        _rng_task(task_factory, "abalone", 40, 5, 17),
        _rng_task(task_factory, "renamed", 42, 3, 18, dataset_id="31"),
        _rng_task(task_factory, "Vehicle_processed", 50, 3, 19),
        _rng_task(task_factory, "narrow", 20, 1, 20),
    ]


EXPECTED = {
    "credit-g": "exact-name",
    "Credit_G_small": "keyword-name",
    "credit-g-v2": "substring",
    "vehicl": "levenshtein",
    "disease-heart": "token-sort",
    "zephyr": "structural",
    "tiny": "edge-case",
    "leaky": "sample-leak",
    "abalone": None,
    "renamed": "explicit-eval",
    "Vehicle_processed": "keyword-name",
    "narrow": "edge-case",
}
EXPLICIT_IDS = ["31"]


def _handles(tasks):
    return [TaskHandle.from_task(t) for t in tasks]


def test_each_rule_fires_in_order(candidates, evals):
    records = run_pipeline(_handles(candidates), _handles(evals), explicit_ids=EXPLICIT_IDS)

    assert [r.name for r in records] == sorted(EXPECTED)
    assert {r.name: r.rule for r in records} == EXPECTED
    assert {r.name: r.verdict for r in records}["abalone"] == "keep"
    assert summarize(records)["keep"] == 1


def test_leak_evidence_names_the_rows(candidates, evals):
    records = {r.name: r for r in run_pipeline(_handles(candidates), _handles(evals), explicit_ids=EXPLICIT_IDS)}
    assert records["leaky"].evidence.startswith("eval=credit-g,eval_row=")


def test_candidate_order_does_not_matter(candidates, evals):
    forward = run_pipeline(_handles(candidates), _handles(evals), explicit_ids=EXPLICIT_IDS)
    backward = run_pipeline(_handles(candidates[::-1]), _handles(evals[::-1]), explicit_ids=EXPLICIT_IDS)
    assert forward == backward


def test_explicit_ids_come_first(task_factory, evals):
    candidate = _rng_task(task_factory, "credit-g", 40, 3, 20, dataset_id="31")
    records = run_pipeline(_handles([candidate]), _handles(evals), explicit_ids=["31"])
    assert records[0].rule == "explicit-eval"
    assert records[0].evidence == "did=31"


def test_oversized_candidate_is_an_edge_case(evals):
    huge = TaskHandle(name="huge", n_rows=1_000_001, n_features=3)
    records = run_pipeline([huge], _handles(evals))
    assert records[0].rule == "edge-case"


def test_lower_threshold_widens_fuzzy_matching(task_factory, evals):
    candidate = _rng_task(task_factory, "vehic", 41, 3, 21)
    assert run_pipeline(_handles([candidate]), _handles(evals))[0].verdict == "keep"
    loose = DedupeConfig(threshold=0.7)
    assert run_pipeline(_handles([candidate]), _handles(evals), cfg=loose)[0].rule == "levenshtein"


def test_sample_leak_check(evals, task_factory):
    credit = evals[0]
    permuted = task_factory("p", credit.X[:, [1, 2, 0]])
    leaked, evidence = sample_leak_check(credit, permuted)
    assert leaked and evidence.startswith("eval=credit-g")

    wider = task_factory("w", np.hstack([credit.X, np.zeros((30, 1))]))
    assert sample_leak_check(credit, wider) == (False, "")


def test_handles_from_directory(tmp_path, small_suite):
    directory = write_suite(small_suite, tmp_path / "cands")
    (directory / "broken.csv").write_text("a\n1\n")
    (directory / "broken.schema").write_text("not a schema\n")

    handles, failed = load_handles(directory)
    assert sorted(h.name for h in handles) == sorted(t.name for t in small_suite)
    assert [r.name for r in failed] == ["broken"] and failed[0].rule == "io-error"
    assert handles[0].load().n_rows == handles[0].n_rows


def test_eval_list_and_discard_file(tmp_path, candidates, evals):
    eval_list = tmp_path / "evals.txt"
    eval_list.write_text("# evals\ncredit-g\n\ndid=31\nvehicle\n")
    assert read_eval_list(eval_list) == (["credit-g", "vehicle"], ["31"])

    path = tmp_path / "out" / "discard.csv"
    write_discard_file(run_pipeline(_handles(candidates), _handles(evals), explicit_ids=EXPLICIT_IDS), path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["name", "verdict", "rule", "evidence"]
    assert ["abalone", "keep", "", ""] in rows
    assert len(rows) == 1 + len(EXPECTED)


def test_without_evals_only_bounds_can_fire(candidates):
    records = run_pipeline(_handles(candidates), [])
    assert {r.rule for r in records} == {"edge-case", None}
    assert sorted(r.name for r in records if r.rule) == ["narrow", "tiny"]


def test_handle_row_count_skips_blank_lines(tmp_path):
    (tmp_path / "gappy.schema").write_text("a,numeric\ny,class_target\n")
    (tmp_path / "gappy.csv").write_text("a,y\n1.0,1\n\n2.0,2\n3.0,1\n\n")
    handle = TaskHandle.from_directory(tmp_path, "gappy")
    assert handle.n_rows == 3
    assert handle.n_rows == handle.load().n_rows
