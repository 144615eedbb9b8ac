import numpy as np
import pytest

from hypertab.errors import DataError
from hypertab.services.container import (
    decode_container,
    encode_container,
    read_container,
    write_container,
)


def _tensors():
    return {
        "w": np.arange(6, dtype=np.float64).reshape(2, 3) / 7.0,
        "scalar": np.array(1.5),
        "index": np.array([3, 1, 4], dtype=np.int64),
    }


def test_save_load_save_is_byte_identical(tmp_path):
    path = tmp_path / "a.iltm"
    write_container(path, "checkpoint", {"step": 3, "note": "x"}, _tensors())
    kind, meta, tensors = read_container(path, expected_kind="checkpoint")

    assert kind == "checkpoint"
    assert meta == {"step": 3, "note": "x"}
    assert tensors["index"].dtype == np.int64
    np.testing.assert_array_equal(tensors["w"], _tensors()["w"])
    assert encode_container(kind, meta, tensors) == path.read_bytes()


def test_bad_magic_is_rejected():
    payload = encode_container("x", {}, _tensors())
    with pytest.raises(DataError):
        decode_container(b"NOPE" + payload[4:])


def test_truncated_and_padded_payloads_are_rejected():
    payload = encode_container("x", {}, _tensors())
    with pytest.raises(DataError):
        decode_container(payload[:-3])
    with pytest.raises(DataError):
        decode_container(payload + b"\x00")


def test_kind_mismatch_and_missing_file(tmp_path):
    path = tmp_path / "e.iltm"
    write_container(path, "ensemble", {}, {})
    with pytest.raises(DataError):
        read_container(path, expected_kind="checkpoint")
    with pytest.raises(DataError):
        read_container(tmp_path / "missing.iltm")
