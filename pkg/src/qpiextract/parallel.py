"""Optional thread workers for embarrassingly parallel per-sample jobs."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap: QPI_NUM_THREADS if set, else the machine core count."""
    env = os.environ.get("QPI_NUM_THREADS")
    if env is not None:
        count = int(env)
        if count < 1:
            raise ValueError(f"QPI_NUM_THREADS must be >= 1, got {count}")
        return count
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map fn over items, results in input order regardless of completion order."""
    workers = min(worker_count(), len(items)) or 1
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
