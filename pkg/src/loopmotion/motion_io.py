"""Canonical motion file format.

Layout: magic "LMO1", joint count (u32), frame rate (f32), frame count (u32),
representation tag ("REL\\0" or "GLB\\0"), then frames as little-endian
float32, row-major per frame. Relative frames are 12*J - 1 wide; global
frames are 6*J + 1 wide (positions, velocities, heading).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .motion import GlobalMotion, RelativeMotion

MAGIC = b"LMO1"
TAG_REL = b"REL\x00"
TAG_GLB = b"GLB\x00"
_HEADER = struct.Struct("<4sIfI4s")


def _global_to_rows(motion: GlobalMotion) -> np.ndarray:
    n = len(motion)
    return np.concatenate([
        motion.positions.reshape(n, -1),
        motion.velocities.reshape(n, -1),
        motion.headings.reshape(n, 1),
    ], axis=1)


def _rows_to_global(rows: np.ndarray, joints: int) -> GlobalMotion:
    n = rows.shape[0]
    return GlobalMotion(
        rows[:, : 3 * joints].reshape(n, joints, 3).astype(np.float64),
        rows[:, 3 * joints: 6 * joints].reshape(n, joints, 3).astype(np.float64),
        rows[:, 6 * joints].astype(np.float64),
    )


def save_motion(path, motion, joints: int, frame_rate: float) -> None:
    if isinstance(motion, RelativeMotion):
        tag, rows = TAG_REL, motion.features
        expected = 12 * joints - 1
    elif isinstance(motion, GlobalMotion):
        tag, rows = TAG_GLB, _global_to_rows(motion)
        expected = 6 * joints + 1
    else:
        raise TypeError(f"cannot serialize {type(motion).__name__}")
    if rows.shape[1] != expected:
        raise DataError(f"frame width {rows.shape[1]} does not match J={joints}")
    data = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, joints, frame_rate, rows.shape[0], tag))
        fh.write(data.tobytes())


def load_motion(path):
    """Returns (motion, joints, frame_rate); motion type follows the tag."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header at byte {len(raw)} (need {_HEADER.size})")
    magic, joints, frame_rate, count, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic at byte 0")
    if tag == TAG_REL:
        width = 12 * joints - 1
    elif tag == TAG_GLB:
        width = 6 * joints + 1
    else:
        raise DataError(f"{path}: unknown representation tag at byte 16")
    need = _HEADER.size + 4 * width * count
    if len(raw) < need:
        raise DataError(f"{path}: truncated payload at byte {len(raw)} (need {need})")
    rows = np.frombuffer(raw, dtype="<f4", count=width * count, offset=_HEADER.size)
    rows = rows.reshape(count, width)
    if tag == TAG_REL:
        return RelativeMotion(rows.astype(np.float64)), joints, frame_rate
    return _rows_to_global(rows, joints), joints, frame_rate
