"""Thread fan-out for nogil numba kernels."""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "NOTCHLAB_THREADS"


def n_threads(threads=None) -> int:
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def pmap(fn, items, threads=None) -> list:
    """Ordered map; results come back in input order whatever the scheduling."""
    items = list(items)
    k = min(n_threads(threads), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))
