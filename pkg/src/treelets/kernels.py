"""Hot loops of the treelet construction.

Two interchangeable implementations are provided for each kernel:

* ``*_numba``: scalar loops compiled with ``numba.njit``;
* ``*_numpy``: vectorised numpy code, used when numba is disabled.

`fit_kernel` and `rotate_columns` point at the numba variants unless
``TREELET_DISABLE_NUMBA`` is set. Both variants perform the same floating
point operations in the same order and make the same merge decisions; the
compiled loop may fuse multiply-adds, so floats agree to rounding rather than
bit for bit.

Pair bookkeeping
----------------
For every active row ``i`` the kernel caches the best similarity over active
``j > i`` (value and smallest such ``j``). After a merge only the row of the
surviving sum variable is rebuilt; other rows are patched in O(1) unless their
cached partner was the merged pair, in which case that single row is rescanned.
"""

import math

import numpy as np

from ._jit import HAS_NUMBA, USE_NUMBA, njit

__all__ = [
    "KIND_CODES",
    "fit_kernel",
    "fit_kernel_numpy",
    "rotate_columns",
    "rotate_columns_numpy",
    "jacobi_angle_scalar",
]

KIND_CODES = {"corr": 0, "abscorr": 1, "corr+cov": 2}

_QUARTER_PI = np.pi / 4.0
_HALF_PI = np.pi / 2.0


@njit
def jacobi_angle_scalar(s11, s22, s12):
    theta = 0.5 * math.atan2(2.0 * s12, s11 - s22)
    if theta > _QUARTER_PI:
        theta -= _HALF_PI
    elif theta < -_QUARTER_PI:
        theta += _HALF_PI
    return theta


# --------------------------------------------------------------------------
# scalar (numba) kernels
# --------------------------------------------------------------------------


@njit
def _similarity(C, i, j, valid, kind, lam):
    if not (valid[i] and valid[j]):
        return -np.inf
    cij = C[i, j]
    r = cij / np.sqrt(C[i, i] * C[j, j])
    if kind == 0:
        return r
    if kind == 1:
        return abs(r)
    return abs(r) + lam * abs(cij)


@njit
def _row_best(C, i, active, valid, kind, lam):
    best = -np.inf
    arg = -1
    if not (active[i] and valid[i]):
        return best, arg
    for j in range(i + 1, C.shape[0]):
        if active[j]:
            v = _similarity(C, i, j, valid, kind, lam)
            if v > best:
                best = v
                arg = j
    return best, arg


@njit
def _fit_loop(cov, n_levels, kind, lam, haar, var_tol):
    p = cov.shape[0]
    C = cov.copy()
    active = np.ones(p, dtype=np.bool_)
    valid = np.empty(p, dtype=np.bool_)
    for i in range(p):
        valid[i] = C[i, i] > var_tol
    rowmax = np.empty(p)
    rowarg = np.empty(p, dtype=np.int64)
    for i in range(p):
        rowmax[i], rowarg[i] = _row_best(C, i, active, valid, kind, lam)

    alphas = np.empty(n_levels, dtype=np.int64)
    betas = np.empty(n_levels, dtype=np.int64)
    thetas = np.empty(n_levels)
    slots = np.empty(n_levels, dtype=np.int64)
    resid = np.empty(n_levels)

    level = 0
    while level < n_levels:
        a = -1
        best = -np.inf
        for i in range(p):
            if rowmax[i] > best:
                best = rowmax[i]
                a = i
        if a < 0:
            break
        b = rowarg[a]

        aa = C[a, a]
        bb = C[b, b]
        ab = C[a, b]
        if haar:
            theta = _QUARTER_PI
        else:
            theta = jacobi_angle_scalar(aa, bb, ab)
        c = math.cos(theta)
        s = math.sin(theta)
        for k in range(p):
            if k != a and k != b:
                cak = C[a, k]
                cbk = C[b, k]
                nak = c * cak + s * cbk
                nbk = -s * cak + c * cbk
                C[a, k] = nak
                C[k, a] = nak
                C[b, k] = nbk
                C[k, b] = nbk
        naa = c * c * aa + 2.0 * c * s * ab + s * s * bb
        nbb = s * s * aa - 2.0 * c * s * ab + c * c * bb
        nab = (c * c - s * s) * ab + c * s * (bb - aa)
        C[a, a] = naa
        C[b, b] = nbb
        C[a, b] = nab
        C[b, a] = nab

        if haar or naa >= nbb:
            keep = a
            drop = b
        else:
            keep = b
            drop = a
        alphas[level] = a
        betas[level] = b
        thetas[level] = theta
        slots[level] = keep
        resid[level] = nab
        level += 1

        active[drop] = False
        rowmax[drop] = -np.inf
        rowarg[drop] = -1
        valid[keep] = C[keep, keep] > var_tol
        rowmax[keep], rowarg[keep] = _row_best(C, keep, active, valid, kind, lam)
        for k in range(p):
            if not active[k] or k == keep:
                continue
            if rowarg[k] == drop:
                rowmax[k], rowarg[k] = _row_best(C, k, active, valid, kind, lam)
            elif k < keep:
                v = _similarity(C, k, keep, valid, kind, lam)
                if v > rowmax[k] or (v == rowmax[k] and keep < rowarg[k]):
                    rowmax[k] = v
                    rowarg[k] = keep
                elif rowarg[k] == keep and v < rowmax[k]:
                    rowmax[k], rowarg[k] = _row_best(C, k, active, valid, kind, lam)

    return (alphas[:level], betas[:level], thetas[:level], slots[:level],
            resid[:level], C)


@njit
def _rotate_columns_loop(A, alphas, betas, thetas, start, stop, inverse):
    m = A.shape[0]
    if inverse:
        for lev in range(stop - 1, start - 1, -1):
            a = alphas[lev]
            b = betas[lev]
            c = math.cos(thetas[lev])
            s = math.sin(thetas[lev])
            for r in range(m):
                x = A[r, a]
                y = A[r, b]
                A[r, a] = c * x - s * y
                A[r, b] = s * x + c * y
    else:
        for lev in range(start, stop):
            a = alphas[lev]
            b = betas[lev]
            c = math.cos(thetas[lev])
            s = math.sin(thetas[lev])
            for r in range(m):
                x = A[r, a]
                y = A[r, b]
                A[r, a] = c * x + s * y
                A[r, b] = -s * x + c * y
    return A


# --------------------------------------------------------------------------
# vectorised numpy kernels
# --------------------------------------------------------------------------


def _similarity_vec(C, i, js, valid, kind, lam):
    if not valid[i]:
        return np.full(len(js), -np.inf)
    cij = C[i, js]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = cij / np.sqrt(C[i, i] * C[js, js])
    if kind == 0:
        out = r
    elif kind == 1:
        out = np.abs(r)
    else:
        out = np.abs(r) + lam * np.abs(cij)
    return np.where(valid[js], out, -np.inf)


def _row_best_vec(C, i, active, valid, kind, lam):
    if not (active[i] and valid[i]):
        return -np.inf, -1
    js = np.flatnonzero(active[i + 1:]) + (i + 1)
    if js.size == 0:
        return -np.inf, -1
    vals = _similarity_vec(C, i, js, valid, kind, lam)
    t = int(np.argmax(vals))
    if vals[t] == -np.inf:
        return -np.inf, -1
    return float(vals[t]), int(js[t])


def fit_kernel_numpy(cov, n_levels, kind, lam, haar, var_tol):
    """Numpy twin of the compiled fit loop (same signature and outputs)."""
    C = np.array(cov, dtype=np.float64, copy=True)
    p = C.shape[0]
    active = np.ones(p, dtype=bool)
    d = np.diag(C).copy()
    valid = d > var_tol

    with np.errstate(divide="ignore", invalid="ignore"):
        R = C / np.sqrt(np.outer(d, d))
    if kind == 0:
        M = R
    elif kind == 1:
        M = np.abs(R)
    else:
        M = np.abs(R) + lam * np.abs(C)
    M = np.where(np.outer(valid, valid), M, -np.inf)
    M[np.tril_indices(p)] = -np.inf
    rowarg = np.argmax(M, axis=1).astype(np.int64)
    rowmax = M[np.arange(p), rowarg].astype(np.float64)
    rowarg[rowmax == -np.inf] = -1
    del M, R

    alphas = np.empty(n_levels, dtype=np.int64)
    betas = np.empty(n_levels, dtype=np.int64)
    thetas = np.empty(n_levels)
    slots = np.empty(n_levels, dtype=np.int64)
    resid = np.empty(n_levels)

    level = 0
    while level < n_levels:
        a = int(np.argmax(rowmax))
        if rowmax[a] == -np.inf:
            break
        b = int(rowarg[a])

        aa = C[a, a]
        bb = C[b, b]
        ab = C[a, b]
        if haar:
            theta = _QUARTER_PI
        else:
            theta = float(jacobi_angle_scalar(aa, bb, ab))
        c = math.cos(theta)
        s = math.sin(theta)
        ra = C[a].copy()
        rb = C[b].copy()
        na = c * ra + s * rb
        nb = -s * ra + c * rb
        C[a, :] = na
        C[:, a] = na
        C[b, :] = nb
        C[:, b] = nb
        naa = c * c * aa + 2.0 * c * s * ab + s * s * bb
        nbb = s * s * aa - 2.0 * c * s * ab + c * c * bb
        nab = (c * c - s * s) * ab + c * s * (bb - aa)
        C[a, a] = naa
        C[b, b] = nbb
        C[a, b] = nab
        C[b, a] = nab

        if haar or naa >= nbb:
            keep, drop = a, b
        else:
            keep, drop = b, a
        alphas[level] = a
        betas[level] = b
        thetas[level] = theta
        slots[level] = keep
        resid[level] = nab
        level += 1

        active[drop] = False
        rowmax[drop] = -np.inf
        rowarg[drop] = -1
        valid[keep] = C[keep, keep] > var_tol
        rowmax[keep], rowarg[keep] = _row_best_vec(C, keep, active, valid, kind, lam)

        ks = np.flatnonzero(active)
        ks = ks[ks != keep]
        stale = rowarg[ks] == drop
        for k in ks[stale]:
            rowmax[k], rowarg[k] = _row_best_vec(C, k, active, valid, kind, lam)
        lo = ks[(~stale) & (ks < keep)]
        if lo.size:
            v = _similarity_vec(C, keep, lo, valid, kind, lam)
            cur = rowmax[lo]
            arg = rowarg[lo]
            better = (v > cur) | ((v == cur) & (keep < arg))
            rowmax[lo[better]] = v[better]
            rowarg[lo[better]] = keep
            worse = (~better) & (arg == keep) & (v < cur)
            for k in lo[worse]:
                rowmax[k], rowarg[k] = _row_best_vec(C, k, active, valid, kind, lam)

    return (alphas[:level], betas[:level], thetas[:level], slots[:level],
            resid[:level], C)


def rotate_columns_numpy(A, alphas, betas, thetas, start, stop, inverse):
    """Numpy twin of the compiled column rotation (in place, returns `A`)."""
    levels = range(stop - 1, start - 1, -1) if inverse else range(start, stop)
    for lev in levels:
        a = alphas[lev]
        b = betas[lev]
        c = math.cos(thetas[lev])
        s = math.sin(thetas[lev])
        x = A[:, a].copy()
        y = A[:, b]
        if inverse:
            A[:, a] = c * x - s * y
            A[:, b] = s * x + c * y
        else:
            A[:, a] = c * x + s * y
            A[:, b] = -s * x + c * y
    return A


if HAS_NUMBA:
    fit_kernel_numba = _fit_loop
    rotate_columns_numba = _rotate_columns_loop
else:  # pragma: no cover
    fit_kernel_numba = None
    rotate_columns_numba = None

if USE_NUMBA:
    fit_kernel = _fit_loop
    rotate_columns = _rotate_columns_loop
else:
    fit_kernel = fit_kernel_numpy
    rotate_columns = rotate_columns_numpy
