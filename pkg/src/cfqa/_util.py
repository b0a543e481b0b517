"""Small shared helpers: hashing, rounding, entropy, worker pool."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF

T = TypeVar("T")
R = TypeVar("R")


def fnv1a_64(data: bytes | bytearray | memoryview) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in bytes(data):
        h ^= b
        h = (h * _FNV_PRIME) & _U64_MASK
    return h


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with halves away from zero (np.round rounds half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def entropy_bits(codes: np.ndarray) -> float:
    """Empirical zeroth-order entropy (bits/symbol) of an integer array."""
    _, counts = np.unique(codes, return_counts=True)
    p = counts / codes.size
    return float(-(p * np.log2(p)).sum())


def bitstream_size(codes: np.ndarray, header_bits: int = 64) -> int:
    """Entropy-based bitstream estimate: ceil(H * count) plus a fixed header."""
    return int(math.ceil(entropy_bits(codes) * codes.size)) + header_bits


def worker_count() -> int:
    """Worker cap from CFQA_THREADS (0 or unset = auto)."""
    raw = os.environ.get("CFQA_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = min(8, os.cpu_count() or 1)
    return n


def worker_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    """Map fn over items, possibly in parallel; result order matches input order."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
