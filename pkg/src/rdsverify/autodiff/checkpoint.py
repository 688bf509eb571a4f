"""Parameter checkpoint container.

Layout (all integers little-endian)::

    b"RDSCKPT\\0"                magic, 8 bytes
    uint32 version              currently 1
    uint64 header_len
    header                      UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    float64 values              each array in header order, row-major, little-endian

The header is written with sorted keys, so equal inputs give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError, MissingFileError

MAGIC = b"RDSCKPT\0"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    header = {
        "meta": meta,
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if not Path(path).is_file():
        raise MissingFileError(f"checkpoint not found: {path}")
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[offset: offset + header_len].decode("utf-8"))
    offset += header_len
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[spec["name"]] = values.reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after last array")
    return arrays, header["meta"]
