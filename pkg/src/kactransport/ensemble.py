"""Order-preserving parallel map over fixed work blocks.

Work is always split into the same blocks regardless of the worker count,
and every block draws from its own derived stream, so results do not
depend on ``jobs``.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(func, tasks, jobs: int = 1):
    """``[func(t) for t in tasks]``, optionally spread over ``jobs`` processes."""
    tasks = list(tasks)
    if jobs is None:
        jobs = default_jobs()
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(func, tasks))


def blocks(n: int, size: int):
    """Split ``range(n)`` into ``(start, stop)`` pairs of at most ``size`` items."""
    if size <= 0:
        raise ValueError("block size must be positive")
    return [(a, min(a + size, n)) for a in range(0, n, size)]
