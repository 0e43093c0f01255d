"""Deterministic fan-out of compiled kernels over disjoint chunks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

_POOLS: dict[int, ThreadPoolExecutor] = {}


def max_threads() -> int:
    return os.cpu_count() or 1


def _pool(n: int) -> ThreadPoolExecutor:
    if n not in _POOLS:
        _POOLS[n] = ThreadPoolExecutor(max_workers=n, thread_name_prefix="mapf")
    return _POOLS[n]


def split_even(n_items: int, threads: int, min_chunk: int = 16) -> list[tuple[int, int]]:
    """Contiguous [lo, hi) ranges; chunking only affects scheduling, never results."""
    if n_items <= 0:
        return []
    k = max(1, min(threads, n_items // min_chunk or 1))
    bounds = [round(i * n_items / k) for i in range(k + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(k) if bounds[i] < bounds[i + 1]]


def split_at_keys(keys: Sequence[int], threads: int) -> list[tuple[int, int]]:
    """Like ``split_even`` over sorted ``keys`` but never separates equal keys."""
    n = len(keys)
    out = []
    lo = 0
    for _, hi in split_even(n, threads):
        if hi <= lo:
            continue
        while hi < n and keys[hi] == keys[hi - 1]:
            hi += 1
        out.append((lo, hi))
        lo = hi
    return out


def run_chunks(fn: Callable[[int, int], None], chunks: list[tuple[int, int]], threads: int) -> None:
    if threads <= 1 or len(chunks) <= 1:
        for lo, hi in chunks:
            fn(lo, hi)
        return
    futures = [_pool(threads).submit(fn, lo, hi) for lo, hi in chunks]
    for f in futures:
        f.result()
