"""Standalone writers for the toolkit's on-disk formats.

This package deliberately re-implements the formats instead of importing the
consumer toolkit: it is the bridge across the component boundary, and the
contract tests verify byte-exactness against the consumer's loaders.

CFT: bytes 0-3 "CFT1", byte 4 dtype code 0x01 (float32-LE), byte 5 rank,
bytes 6-15 zero, then rank little-endian uint64 dims, then row-major payload.
PGM: binary P5, maxval 255. Logits: single CSV row, gt index then logits.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CFT_MAGIC = b"CFT1"
CFT_DTYPE_F32_LE = 0x01

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a; the manifest checksum convention."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def cft_payload(values: np.ndarray) -> bytes:
    """Row-major float32-LE payload bytes (the checksummed portion)."""
    return np.ascontiguousarray(values, dtype="<f4").tobytes(order="C")


def cft_bytes(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim < 1:
        raise ValueError("tensor must have rank >= 1")
    if not np.isfinite(values).all():
        raise ValueError("tensor payload contains NaN or Inf")
    header = CFT_MAGIC + bytes([CFT_DTYPE_F32_LE, values.ndim]) + b"\x00" * 10
    dims = b"".join(struct.pack("<Q", d) for d in values.shape)
    return header + dims + cft_payload(values)


def write_cft(values: np.ndarray, path: str | Path) -> int:
    """Write a CFT file; returns the FNV-1a checksum of its payload."""
    data = cft_bytes(values)
    Path(path).write_bytes(data)
    rank = np.asarray(values).ndim
    return fnv1a_64(data[16 + 8 * rank :])


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    """Binary P5 PGM, maxval 255, one byte per pixel."""
    a = np.asarray(values)
    if a.ndim != 2:
        raise ValueError(f"PGM payload must be 2D, got rank {a.ndim}")
    if a.min() < 0 or a.max() > 255:
        raise ValueError("PGM values must lie in [0, 255]")
    h, w = a.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + a.astype(np.uint8).tobytes(order="C"))


def write_logits_csv(gt_label: int, logits: np.ndarray, path: str | Path) -> None:
    """One CSV row: ground-truth index followed by the logit values."""
    v = np.asarray(logits, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty logits")
    if not 0 <= gt_label < v.size:
        raise ValueError(f"gt index {gt_label} outside 0..{v.size - 1}")
    row = [str(int(gt_label))] + [repr(float(x)) for x in v]
    Path(path).write_text(",".join(row) + "\n", encoding="utf-8")
