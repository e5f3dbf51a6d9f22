"""Energy scores of treelet bases and cross-validated best K-basis selection."""

import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._parallel import map_ordered
from ._rng import child_rng
from .engine import EngineConfig, fit_covariance
from .exceptions import DimensionError, InsufficientDataError, TreeletError
from .matrix import as_data_matrix, center_columns, sample_covariance

__all__ = [
    "EnergyReport",
    "BestBasisResult",
    "energy_scores",
    "gamma_k",
    "fold_assignment",
    "level_scores",
    "best_k_basis",
    "knee_level",
    "curve_csv",
]

# relative tolerance under which two CV scores count as tied
SCORE_RTOL = 1e-9


@dataclass(frozen=True)
class EnergyReport:
    energies: np.ndarray  # per basis column, fraction of total energy
    order: np.ndarray  # column indices by decreasing energy

    @property
    def sorted_energies(self):
        return self.energies[self.order]


@dataclass(frozen=True)
class BestBasisResult:
    level: int
    scores: np.ndarray  # (levels, folds)
    mean: np.ndarray  # (levels,)
    k: int
    folds: int
    seed: int

    @property
    def levels(self):
        return np.arange(len(self.mean))


def _report(col_energy, total):
    if total <= 0:
        raise TreeletError("data have zero total energy")
    e = col_energy / total
    # stable sort keeps ties in column order
    order = np.argsort(-e, kind="stable")
    return EnergyReport(e, order)


def energy_scores(B, X):
    """Normalised energy of each column of `B` on the (centred) rows of `X`."""
    B = np.asarray(B, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if B.shape[0] != X.shape[1]:
        raise DimensionError(f"basis has {B.shape[0]} rows but data have {X.shape[1]} variables")
    proj = X @ B
    return _report(np.sum(proj ** 2, axis=0), float(np.sum(X ** 2)))


def gamma_k(report, k):
    """Sum of the `k` largest energies."""
    p = len(report.energies)
    if not 1 <= k <= p:
        raise TreeletError(f"K must be in 1..{p}, got {k}")
    return float(np.sum(report.sorted_energies[:k]))


def _top_k_sum(e, k):
    if k >= e.size:
        return float(e.sum())
    return float(np.sum(np.partition(e, e.size - k)[e.size - k:]))


def level_scores(model, X_test, k, max_level=None):
    """Gamma_K of the basis at every level 0..max_level on held-out rows.

    Only two columns change per level, so the sweep costs O(n p) per level.
    """
    max_level = model.height if max_level is None else max_level
    Y = np.array(X_test, dtype=np.float64, order="C", copy=True)
    total = float(np.sum(Y ** 2))
    if total <= 0:
        raise TreeletError("held-out data have zero total energy")
    e = np.sum(Y ** 2, axis=0)
    out = np.empty(max_level + 1)
    out[0] = _top_k_sum(e, k) / total
    for lev in range(max_level):
        kernels.rotate_columns(Y, model.alphas, model.betas, model.thetas, lev, lev + 1, False)
        a, b = model.alphas[lev], model.betas[lev]
        e[a] = np.dot(Y[:, a], Y[:, a])
        e[b] = np.dot(Y[:, b], Y[:, b])
        out[lev + 1] = _top_k_sum(e, k) / total
    return out


def fold_assignment(n, folds, seed):
    """Fold id per observation: contiguous blocks of a seeded permutation."""
    if not 2 <= folds <= n:
        raise TreeletError(f"folds must be in 2..n={n}, got {folds}")
    perm = child_rng(seed, "folds").permutation(n)
    ids = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        ids[chunk] = f
    return ids


def _argmax_smallest(values, rtol=SCORE_RTOL):
    best = float(np.max(values))
    tol = rtol * max(abs(best), 1.0)
    return int(np.flatnonzero(values >= best - tol)[0])


def best_k_basis(X, k, folds=5, config=None, seed=0, max_level=None):
    """Cross-validated choice of the tree height maximising Gamma_K.

    For each fold a full-height tree is fitted on the training rows; every
    level of that tree is scored on the held-out rows, centred with the
    training means. Levels whose mean score is within `SCORE_RTOL` of the
    best are ties and the smallest one wins.
    """
    X = as_data_matrix(X)
    n, p = X.shape
    if not 1 <= k <= p:
        raise TreeletError(f"K must be in 1..{p}, got {k}")
    if folds > n:
        raise InsufficientDataError(f"folds={folds} exceeds n={n}")
    config = config or EngineConfig()
    ids = fold_assignment(n, folds, seed)

    def one_fold(f):
        train, test = X[ids != f], X[ids == f]
        if train.shape[0] < 2:
            raise InsufficientDataError(f"fold {f} leaves fewer than 2 training rows")
        Xc, means = center_columns(train)
        model = fit_covariance(sample_covariance(Xc), config)
        top = model.height if max_level is None else min(max_level, model.height)
        return level_scores(model, test - means, k, top)

    curves = map_ordered(one_fold, range(folds))
    depth = min(len(c) for c in curves)
    scores = np.column_stack([c[:depth] for c in curves])
    mean = scores.mean(axis=1)
    return BestBasisResult(_argmax_smallest(mean), scores, mean, int(k), int(folds), int(seed))


def knee_level(curve):
    """Level with the largest drop in slope, ``-(c[l+1] - 2 c[l] + c[l-1])``."""
    c = np.asarray(curve, dtype=np.float64)
    if c.size < 3:
        raise TreeletError("need at least three levels to locate a knee")
    second = c[2:] - 2.0 * c[1:-1] + c[:-2]
    return int(np.argmax(-second)) + 1


def curve_csv(result):
    """CSV text ``level,fold_1..fold_F,mean`` with shortest round-trip floats."""
    buf = io.StringIO()
    buf.write(",".join(["level"] + [f"fold_{f + 1}" for f in range(result.folds)] + ["mean"]))
    buf.write("\n")
    for lev in range(len(result.mean)):
        row = [str(lev)] + [repr(float(v)) for v in result.scores[lev]] + [repr(float(result.mean[lev]))]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
