"""Compiled comparison kernel for the two-layer Monte Carlo estimator."""
import os

import numba
import numpy as np
from numba import njit, prange

WORKERS_ENV = "TRIALDESIGN_WORKERS"

# skip probing TBB (old system builds only emit a warning); OpenMP or the
# built-in work queue are equivalent for this kernel
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def set_workers(workers: int | None = None) -> int:
    """Set the kernel thread count (``None`` reads ``TRIALDESIGN_WORKERS``); returns the count used."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else numba.config.NUMBA_NUM_THREADS
    workers = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(workers)
    return workers


@njit(parallel=True, cache=True)
def _count_dominated(key, rest, tkey, trest):
    # key: (N2,) sorted ascending; rest: (N2, n-1) rows aligned with key
    # tkey: (N1,), trest: (N1, n-1) thresholds
    n1 = tkey.shape[0]
    m = rest.shape[1]
    counts = np.zeros(n1, dtype=np.int64)
    for k in prange(n1):
        p = np.searchsorted(key, tkey[k], side="right")
        c = 0
        for l in range(p):
            ok = True
            for j in range(m):
                if rest[l, j] > trest[k, j]:
                    ok = False
                    break
            if ok:
                c += 1
        counts[k] = c
    return counts


def count_dominated(x: np.ndarray, thresholds: np.ndarray) -> int:
    """Number of (k, l) pairs with ``x[l] <= thresholds[k]`` in every coordinate.

    The inner sample is sorted on its most selective coordinate so each outer
    row only scans a prefix. Counts are integers, so the total is identical
    for any thread count.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    n2, n = x.shape
    if n2 == 0 or t.shape[0] == 0:
        return 0
    # pick the coordinate whose thresholds admit the fewest inner rows
    sorted_cols = np.sort(x, axis=0)
    admitted = [np.searchsorted(sorted_cols[:, j], t[:, j], side="right").sum() for j in range(n)]
    key_col = int(np.argmin(admitted))
    order = np.argsort(x[:, key_col], kind="stable")
    others = [j for j in range(n) if j != key_col]
    key = np.ascontiguousarray(x[order, key_col])
    rest = np.ascontiguousarray(x[order][:, others]).reshape(n2, n - 1)
    tkey = np.ascontiguousarray(t[:, key_col])
    trest = np.ascontiguousarray(t[:, others]).reshape(t.shape[0], n - 1)
    return int(_count_dominated(key, rest, tkey, trest).sum())
