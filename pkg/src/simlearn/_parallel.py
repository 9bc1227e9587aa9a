"""Deterministic fan-out helpers.

Work is always split into the same fixed-size pieces whatever the thread
count; threads only change who computes a piece, and results are merged in
piece order, so outputs are bit-identical for any thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "SIMLEARN_THREADS"


def resolve_threads(n_threads=None):
    if n_threads is None:
        n_threads = int(os.environ.get(ENV_THREADS, "1") or 1)
    cap = os.environ.get(ENV_THREADS)
    if cap:
        n_threads = min(n_threads, int(cap))
    return max(1, int(n_threads))


def ordered_map(fn, items, n_threads=None):
    items = list(items)
    n_threads = resolve_threads(n_threads)
    if n_threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, items))


def chunk_bounds(n, size):
    return [(a, min(a + size, n)) for a in range(0, n, size)]
