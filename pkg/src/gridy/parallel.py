"""Thread-pool mapping with a global cap.

numpy releases the GIL inside LAPACK, so threads help for the SVD-heavy
stages. The cap comes from ``set_max_threads`` (CLI ``--threads``) or the
``GRIDY_THREADS`` environment variable; default 1.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_max_threads = None


def set_max_threads(n):
    global _max_threads
    _max_threads = None if n is None else max(1, int(n))


def max_threads():
    if _max_threads is not None:
        return _max_threads
    try:
        return max(1, int(os.environ.get("GRIDY_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items, threads=None):
    """Ordered map; runs serially when the cap is 1."""
    items = list(items)
    n = max_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
