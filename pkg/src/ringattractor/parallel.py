"""Order-preserving parallel map for independent simulation jobs."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "RING_SIM_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Workers to use: ``requested``, capped by ``RING_SIM_THREADS`` if set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


def parallel_map(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, run on a thread pool when more than one worker.

    The compiled kernel drops the GIL inside each step, so threads overlap.
    Results come back in input order regardless of completion order.
    """
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
