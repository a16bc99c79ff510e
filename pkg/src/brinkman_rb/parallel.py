"""Thread-count handling and an order-preserving parallel map.

The worker count comes from ``BRINKMAN_RB_THREADS`` (default 1).  The heavy
kernels (SuperLU, BLAS, the compiled simplex) release the GIL, so threads
are enough.  Results are returned in input order, which keeps every output
independent of the worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "BRINKMAN_RB_THREADS"


def n_threads():
    raw = os.environ.get(THREADS_ENV, "1").strip()
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def pmap(fn, items, threads=None):
    items = list(items)
    threads = n_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def chunks(n, size):
    """``(start, stop)`` ranges covering ``range(n)``."""
    return [(s, min(n, s + size)) for s in range(0, n, size)]
