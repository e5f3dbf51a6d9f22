"""Timing helpers for the fit kernel (used by the benchmark script and tests)."""

import time

import numpy as np

from . import kernels
from ._rng import child_rng
from .engine import VAR_RTOL
from .matrix import center_columns, sample_covariance


def random_covariance(p, n=None, seed=0):
    """Sample covariance of `n` (default p // 2) standard-normal rows."""
    n = max(2, p // 2) if n is None else n
    X = child_rng(seed, "perf", p).standard_normal((n, p))
    Xc, _ = center_columns(X)
    return sample_covariance(Xc)


def _backend(name):
    if name == "numba":
        if kernels.fit_kernel_numba is None:
            raise RuntimeError("numba is not installed")
        return kernels.fit_kernel_numba
    if name == "numpy":
        return kernels.fit_kernel_numpy
    raise ValueError(f"unknown backend {name!r}")


def time_fit(S, height, backend="numba", repeats=3):
    """Best-of-`repeats` wall time (s) of the fit kernel on covariance `S`."""
    fn = _backend(backend)
    var_tol = VAR_RTOL * float(np.max(np.diag(S)))
    fn(S[:4, :4].copy(), 1, 0, 0.0, False, 0.0)  # compile outside the timed region
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(S, height, 0, 0.0, False, var_tol)
        best = min(best, time.perf_counter() - t0)
    return best


def pair_maintenance_time(S, height, backend="numba", repeats=3):
    """Time of levels 2..height: full fit minus a one-level fit.

    The one-level fit carries the fixed costs (copying the covariance and
    the initial O(p^2) similarity pass), so the difference isolates the
    per-level merge, rotation and cache upkeep.
    """
    full = time_fit(S, height, backend, repeats)
    base = time_fit(S, 1, backend, repeats)
    return max(full - base, 0.0), full, base


def maintenance_growth(p_small, p_large, backend="numba", repeats=15, ratio=1.0):
    """Per-merge pair-maintenance time at `p_large` over that at `p_small`.

    Both sizes use ``L = ratio * (p - 1)``; each size is timed back to back
    (warm cache) and the best of `repeats` is kept.

    Returns
    -------
    per_merge_ratio, total_ratio
    """
    best = []
    heights = []
    for p in (p_small, p_large):
        L = max(2, int(round(ratio * (p - 1))))
        m, _, _ = pair_maintenance_time(random_covariance(p), L, backend, repeats)
        best.append(m)
        heights.append(L)
    per = (best[1] / (heights[1] - 1)) / (best[0] / (heights[0] - 1))
    return per, best[1] / best[0]
