"""Deterministic chunked execution.

Work is cut into fixed-size chunks whose boundaries never depend on the
worker count; results are returned in chunk order, so any reduction done
by the caller in that order is bit-reproducible.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from .stochastic import LANES

T = TypeVar("T")

# trajectories per chunk; a multiple of LANES
CHUNK_TRAJECTORIES = 16 * LANES
THREADS_ENV = "SDE_WEAK_LAB_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else $SDE_WEAK_LAB_THREADS, else the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            threads = int(env)
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return int(threads)


def chunk_ranges(total: int, chunk: int = CHUNK_TRAJECTORIES) -> list[tuple[int, int]]:
    """``(start, count)`` pairs covering ``range(total)``."""
    return [(s, min(chunk, total - s)) for s in range(0, total, chunk)]


def map_chunks(fn: Callable[[int, int], T], total: int, threads: int | None = None,
               chunk: int = CHUNK_TRAJECTORIES) -> list[T]:
    """Apply ``fn(start, count)`` to every chunk; results in chunk order."""
    ranges = chunk_ranges(total, chunk)
    n = min(resolve_threads(threads), len(ranges))
    if n <= 1:
        return [fn(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda sc: fn(*sc), ranges))
