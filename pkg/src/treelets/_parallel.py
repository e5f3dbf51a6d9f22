"""Ordered parallel map capped by the ``TREELET_THREADS`` environment variable."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    try:
        return max(1, int(os.environ.get("TREELET_THREADS", "1")))
    except ValueError:
        return 1


def map_ordered(fn, items):
    """``[fn(x) for x in items]``, run on up to TREELET_THREADS threads.

    Results come back in input order so reductions stay deterministic.
    """
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
