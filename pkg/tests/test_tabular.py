import numpy as np
import pytest

from hypertab.errors import DataError, SchemaError
from hypertab.services.tabular import (
    CATEGORICAL,
    CLASSIFICATION,
    NUMERIC,
    UNKNOWN_CODE,
    ColumnSpec,
    MetaCollection,
    Schema,
    default_splits,
    list_tasks,
    load_csv,
    load_task,
    one_hot_labels,
    read_schema,
    save_task,
    validate_disjoint_roles,
    write_schema,
)


def _schema():
    return Schema(
        columns=(ColumnSpec("age", NUMERIC), ColumnSpec("color", CATEGORICAL, ("red", "blue"))),
        target="label",
        task_kind=CLASSIFICATION,
        target_vocabulary=("no", "yes"),
        dataset_id="31",
    )


def test_schema_file_round_trip(tmp_path):
    path = tmp_path / "t.schema"
    write_schema(_schema(), path)
    assert read_schema(path) == _schema()


def test_schema_without_target_is_rejected(tmp_path):
    path = tmp_path / "t.schema"
    path.write_text("a,numeric\nb,numeric\n")
    with pytest.raises(SchemaError):
        read_schema(path)


def test_load_csv_maps_missing_and_unknown_cells(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("label,color,age\nyes,red,1.5\nno,green,\nyes,,x\n")
    task = load_csv(path, _schema())

    assert task.n_rows == 3
    assert task.n_classes == 2
    np.testing.assert_array_equal(task.y, [2, 1, 2])
    assert task.X[0, 0] == 1.5 and task.X[0, 1] == 0.0
    assert np.isnan(task.X[1, 0]) and task.X[1, 1] == UNKNOWN_CODE
    assert np.isnan(task.X[2, 0]) and np.isnan(task.X[2, 1])


def test_load_csv_rejects_header_mismatch(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("label,age,extra\nyes,1,2\n")
    with pytest.raises(SchemaError):
        load_csv(path, _schema())


def test_load_csv_rejects_unknown_target(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("label,color,age\nmaybe,red,1\n")
    with pytest.raises(DataError):
        load_csv(path, _schema())


def test_default_splits_partition_rows():
    splits = default_splits(50, seed=1)
    assert splits["test"].size == 10
    assert np.intersect1d(splits["train"], splits["test"]).size == 0
    np.testing.assert_array_equal(np.sort(np.concatenate([splits["train"], splits["test"]])), np.arange(50))


def test_save_and_load_task_preserve_values(tmp_path, small_suite):
    task = small_suite[3]
    save_task(task, tmp_path)
    loaded = load_task(tmp_path, task.name)

    assert list_tasks(tmp_path) == [task.name]
    np.testing.assert_array_equal(loaded.X, task.X)
    np.testing.assert_array_equal(loaded.y, task.y)
    np.testing.assert_array_equal(loaded.split("test"), task.split("test"))


def test_one_hot_labels():
    np.testing.assert_array_equal(one_hot_labels(np.array([1, 3]), 3), [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(DataError):
        one_hot_labels(np.array([0]), 3)


def test_overlapping_roles_are_rejected(small_suite):
    train = MetaCollection(tasks=small_suite[:2], role="meta-train")
    val = MetaCollection(tasks=small_suite[1:], role="meta-val")
    with pytest.raises(DataError):
        validate_disjoint_roles(train, val)
