"""Deterministic block-parallel execution.

Work is split into fixed-size blocks whose boundaries depend only on the
problem size, never on the worker count. Results come back in block order, so
any downstream reduction is bit-identical for 1 or many workers. The numba
kernels release the GIL, which makes a thread pool sufficient.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

_default_workers: int | None = None


def set_default_workers(n: int | None) -> None:
    global _default_workers
    _default_workers = n


def default_workers() -> int:
    return _default_workers or os.cpu_count() or 1


def block_ranges(n_items: int, block_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + block_size, n_items)) for s in range(0, n_items, block_size)]


def map_blocks(fn: Callable[[int, int], T], n_items: int, block_size: int,
               workers: int | None = None) -> list[T]:
    """Apply ``fn(start, stop)`` to each block and return results in block order."""
    ranges = block_ranges(n_items, block_size)
    workers = workers or default_workers()
    if workers <= 1 or len(ranges) <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def map_items(fn: Callable[[int], T], n_items: int, workers: int | None = None) -> list[T]:
    """Apply ``fn(i)`` to independent work items, results in index order."""
    workers = workers or default_workers()
    if workers <= 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_items)))
