"""The compiled and numpy kernels must agree, and both must match a naive
level-by-level reference built from the matrix primitives."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from treelets import kernels
from treelets.engine import select_pair
from treelets.matrix import SimilarityConfig, jacobi_angle, rotate_covariance, similarity_matrix

from conftest import random_spd

needs_numba = pytest.mark.skipif(kernels.fit_kernel_numba is None, reason="numba not installed")

KINDS = [("corr", 0.0), ("abscorr", 0.0), ("corr+cov", 0.7)]


def naive_fit(S, levels, kind="corr", lam=0.0, haar=False):
    """Exhaustive O(p^2)-per-level reference."""
    C = np.array(S, dtype=float)
    p = C.shape[0]
    active = list(range(p))
    cfg = SimilarityConfig(kind, lam)
    out = []
    for _ in range(levels):
        M = similarity_matrix(C, cfg)
        a, b = select_pair(M, active)
        th = np.pi / 4 if haar else jacobi_angle(C[a, a], C[b, b], C[a, b])
        C = rotate_covariance(C, a, b, th)
        keep = a if haar or C[a, a] >= C[b, b] else b
        active.remove(b if keep == a else a)
        out.append((a, b, th, keep))
    return out


@pytest.mark.parametrize("kind, lam", KINDS)
@pytest.mark.parametrize("haar", [False, True])
def test_numpy_kernel_matches_naive(kind, lam, haar, rng):
    S = random_spd(rng, 12)
    code = {"corr": 0, "abscorr": 1, "corr+cov": 2}[kind]
    a, b, th, keep, _, _ = kernels.fit_kernel_numpy(S, 11, code, lam, haar, 0.0)
    ref = naive_fit(S, 11, kind, lam, haar)
    assert [(int(x), int(y)) for x, y in zip(a, b)] == [(r[0], r[1]) for r in ref]
    assert np.allclose(th, [r[2] for r in ref], atol=1e-12)
    assert list(keep) == [r[3] for r in ref]


def _assert_same_fit(r1, r2, S):
    # identical merge decisions; floats may differ in the last bits because
    # the compiled loop is free to fuse multiply-adds
    for x, y in zip(r1[:2] + r1[3:4], r2[:2] + r2[3:4]):
        assert np.array_equal(x, y)
    scale = float(np.max(np.abs(S)))
    assert np.allclose(r1[2], r2[2], rtol=0, atol=1e-12)
    assert np.allclose(r1[4], r2[4], rtol=0, atol=1e-12 * scale)
    assert np.allclose(r1[5], r2[5], rtol=0, atol=1e-12 * scale)


@needs_numba
@given(st.integers(2, 25), st.integers(0, 2), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_backends_agree(p, kind, haar, seed):
    S = random_spd(np.random.default_rng(seed), p, n=max(3, p // 2))
    lam = 0.3 if kind == 2 else 0.0
    r1 = kernels.fit_kernel_numba(S, p - 1, kind, lam, haar, 1e-12 * S.diagonal().max())
    r2 = kernels.fit_kernel_numpy(S, p - 1, kind, lam, haar, 1e-12 * S.diagonal().max())
    _assert_same_fit(r1, r2, S)


@needs_numba
def test_rotate_columns_backends_agree(rng):
    A = rng.standard_normal((7, 9))
    al = np.array([0, 2, 0, 5])
    be = np.array([1, 3, 2, 8])
    th = rng.uniform(-0.7, 0.7, 4)
    for inverse in (False, True):
        x = kernels.rotate_columns_numba(A.copy(), al, be, th, 0, 4, inverse)
        y = kernels.rotate_columns_numpy(A.copy(), al, be, th, 0, 4, inverse)
        assert np.allclose(x, y, rtol=0, atol=1e-14)
    fwd = kernels.rotate_columns_numpy(A.copy(), al, be, th, 1, 3, False)
    back = kernels.rotate_columns_numpy(fwd, al, be, th, 1, 3, True)
    assert np.allclose(back, A, atol=1e-14)


@needs_numba
def test_larger_problem_matches(rng):
    S = random_spd(rng, 150, n=60)
    r1 = kernels.fit_kernel_numba(S, 149, 0, 0.0, False, 0.0)
    r2 = kernels.fit_kernel_numpy(S, 149, 0, 0.0, False, 0.0)
    _assert_same_fit(r1, r2, S)


def test_env_flag_selects_numpy():
    code = ("from treelets import kernels, _jit;"
            "print(_jit.USE_NUMBA, kernels.fit_kernel is kernels.fit_kernel_numpy)")
    env = dict(os.environ, TREELET_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]
    env["TREELET_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split()[1] == str(kernels.fit_kernel_numba is None)
