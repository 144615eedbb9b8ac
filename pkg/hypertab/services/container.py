"""
The versioned ILTM binary container.

Layout (little-endian):
    b"ILTM" | uint32 version | uint32 len + JSON metadata | uint32 tensor count
    per tensor: uint16 len + name | uint8 ndim | int64 shape[ndim] | float64 data

Checkpoints, fitted ensembles and the task-embedding cache all use it.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from hypertab.errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b"ILTM"
FORMAT_VERSION = 1

_FLOAT = np.dtype("<f8")


def _encode_metadata(kind: str, metadata: Dict, int_tensors) -> bytes:
    block = dict(metadata)
    block["kind"] = kind
    block["int_tensors"] = sorted(int_tensors)
    return json.dumps(block, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_container(kind: str, metadata: Dict, tensors: Dict[str, np.ndarray]) -> bytes:
    """Serialize to bytes; tensors are written in sorted-name order."""
    int_tensors = [
        name for name, t in tensors.items()
        if np.issubdtype(np.asarray(t).dtype, np.integer) or np.asarray(t).dtype == bool
    ]
    meta = _encode_metadata(kind, metadata, int_tensors)
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(meta)), meta]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.source}: truncated container")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_container(data: bytes, source: str = "<bytes>") -> Tuple[str, Dict, Dict[str, np.ndarray]]:
    """Inverse of encode_container: (kind, metadata, tensors)."""
    reader = _Reader(data, source)
    if reader.take(4) != MAGIC:
        raise DataError(f"{source}: not an ILTM container")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported container version {version}")
    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{source}: corrupt metadata block ({e})")

    int_tensors = set(metadata.pop("int_tensors", []))
    kind = metadata.pop("kind", "")
    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(reader.take(size * 8), dtype=_FLOAT).reshape(shape).astype(np.float64)
        if name in int_tensors:
            array = array.astype(np.int64)
        tensors[name] = array
    if reader.pos != len(data):
        raise DataError(f"{source}: trailing bytes after last tensor")
    return kind, metadata, tensors


def write_container(path: Path, kind: str, metadata: Dict, tensors: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_container(kind, metadata, tensors)
    with open(path, "wb") as f:
        f.write(payload)
    logger.debug(f"Wrote {kind} container {path} ({len(payload)} bytes, {len(tensors)} tensors)")


def read_container(path: Path, expected_kind: str = None) -> Tuple[str, Dict, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Container not found: {path}")
    with open(path, "rb") as f:
        kind, metadata, tensors = decode_container(f.read(), str(path))
    if expected_kind is not None and kind != expected_kind:
        raise DataError(f"{path}: expected a {expected_kind} container, found {kind}")
    return kind, metadata, tensors
