"""Self-describing binary checkpoint container.

Layout: magic "LMCK", format version (u32), header length (u64), JSON header,
then the raw tensor bytes. The header carries arbitrary JSON metadata plus an
index of named float32 tensor blocks; round-trips are bitwise stable.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"LMCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_container(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    index = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(data.shape), "offset": offset,
                      "nbytes": data.nbytes})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path):
    """Returns (tensors: dict[str, np.ndarray float32], meta: dict)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: truncated container header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint container")
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if len(raw) < _PREFIX.size + hlen:
        raise DataError(f"{path}: truncated header block")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    base = _PREFIX.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise DataError(f"{path}: truncated tensor block {entry['name']} at byte {len(raw)}")
        arr = np.frombuffer(raw[start:stop], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return tensors, header["meta"]
