"""Named-tensor checkpoint files.

``checkpoint.bin`` holds the ``MASL`` magic and format version followed by raw
little-endian tensors; ``checkpoint.index.jsonl`` has one metadata line and
then one ``{"name", "shape", "dtype", "offset"}`` line per tensor.  Tensors are
stored as float64 so a resumed run continues bit-for-bit.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datagen import FORMAT_VERSION, MAGIC, DatasetFormatError


def index_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".index.jsonl")


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    rows = []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            rows.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": fh.tell()})
            fh.write(arr.tobytes())
    with open(index_path(path), "w") as fh:
        fh.write(json.dumps({"meta": meta or {}}) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")
    with open(index_path(path)) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    meta, tensors = lines[0].get("meta", {}), {}
    for row in lines[1:]:
        count = int(np.prod(row["shape"])) if row["shape"] else 1
        end = row["offset"] + 8 * count
        if end > len(raw):
            raise DatasetFormatError(f"{path}: tensor {row['name']} truncated")
        tensors[row["name"]] = np.frombuffer(raw[row["offset"]:end], dtype="<f8").reshape(row["shape"]).copy()
    return tensors, meta
