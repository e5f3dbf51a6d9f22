"""Treelets as feature extractors for regression and classification.

Contents: a Gaussian discriminant score for basis vectors, a diagonal
Gaussian classifier, net analyte signal oracles, correlation-based variable
selection, univariate-response PLS with leave-one-out model choice, the
p >> n regression comparison, and a two-way (variables then samples)
treelet classifier.
"""

import io
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._parallel import map_ordered
from ._rng import child_rng
from .engine import EngineConfig, fit_covariance
from .exceptions import InsufficientDataError, RankDeficientError, TreeletError, DimensionError
from .matrix import as_data_matrix, center_columns, sample_covariance
from . import kernels
from .synthetic import figure4_spec, sample_mixture

__all__ = [
    "DiscriminantReport",
    "NasResult",
    "PLSModel",
    "GaussianClassifier",
    "discriminant_scores",
    "net_analyte_signal",
    "supervised_variable_select",
    "t_statistic_ranking",
    "pls_fit",
    "pls_path",
    "pls_predict",
    "pls_loo",
    "pls_fit_loo",
    "treelet_features",
    "figure4_experiment",
    "figure4_csv",
    "two_way_classify",
]

VAR_FLOOR_RTOL = 1e-12


def _labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    classes = np.unique(labels)
    if classes.size < 2:
        raise TreeletError("need at least two classes")
    return labels, classes


# --------------------------------------------------------------------------
# discriminant score and Gaussian classifier
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminantReport:
    scores: np.ndarray
    order: np.ndarray  # columns by decreasing score, ties in column order


def _gauss_kl(m1, v1, m2, v2):
    """KL(N(m1, v1) || N(m2, v2)), broadcasting."""
    return 0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


def discriminant_scores(B, X, labels):
    """Sum of pairwise Gaussian KL divergences between class-wise projections.

    Every basis vector (column of `B`) gets
    ``sum_j sum_{k != j} KL(p_j || p_k)`` with p_j the Gaussian fitted to
    class j's projections. Class variances are floored at 1e-12 times the
    overall projection variance.
    """
    X = as_data_matrix(X, min_cols=1)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != X.shape[1]:
        raise DimensionError(f"basis has {B.shape[0]} rows but data have {X.shape[1]} variables")
    labels, classes = _labels(labels, X.shape[0])
    proj = X @ B
    floor = VAR_FLOOR_RTOL * np.maximum(proj.var(axis=0), 1e-300)
    means, vars_ = [], []
    for c in classes:
        rows = proj[labels == c]
        if rows.shape[0] < 2:
            raise InsufficientDataError(f"class {c!r} has fewer than 2 samples")
        means.append(rows.mean(axis=0))
        vars_.append(np.maximum(rows.var(axis=0, ddof=1), floor))
    score = np.zeros(B.shape[1])
    for j in range(len(classes)):
        for k in range(len(classes)):
            if j != k:
                score += _gauss_kl(means[j], vars_[j], means[k], vars_[k])
    score = np.maximum(score, 0.0)
    return DiscriminantReport(score, np.argsort(-score, kind="stable"))


class GaussianClassifier:
    """Diagonal-covariance Gaussian classifier with equal class priors."""

    def fit(self, features, labels):
        F = as_data_matrix(features, min_cols=1)
        labels, classes = _labels(labels, F.shape[0])
        self.classes_ = classes
        self.means_ = np.empty((classes.size, F.shape[1]))
        self.vars_ = np.empty_like(self.means_)
        for i, c in enumerate(classes):
            rows = F[labels == c]
            if rows.shape[0] < 2:
                raise InsufficientDataError(f"class {c!r} has fewer than 2 samples")
            self.means_[i] = rows.mean(axis=0)
            self.vars_[i] = rows.var(axis=0, ddof=1)
        scale = float(np.max(F.var(axis=0))) if F.size else 1.0
        self.vars_ = np.maximum(self.vars_, VAR_FLOOR_RTOL * max(scale, 1e-300))
        return self

    def log_likelihood(self, features):
        F = np.atleast_2d(np.asarray(features, dtype=np.float64))
        d = F[:, None, :] - self.means_[None, :, :]
        return -0.5 * np.sum(np.log(2 * np.pi * self.vars_)[None] + d ** 2 / self.vars_[None], axis=2)

    def predict(self, features):
        # argmax returns the first maximum, i.e. the smallest class id on ties
        return self.classes_[np.argmax(self.log_likelihood(features), axis=1)]


# --------------------------------------------------------------------------
# net analyte signal and variable selection
# --------------------------------------------------------------------------


class NasResult(NamedTuple):
    v_y: np.ndarray
    mse_floor: float  # sigma^2 weight^2 / |v_y|^2, inf when v_y vanishes


def net_analyte_signal(v1, others, sigma=1.0, weight=1.0):
    """Part of `v1` orthogonal to the span of the interfering loadings.

    ``mse_floor`` is the error of the MSE-optimal unbiased linear predictor
    of ``y = weight * u1`` under noise level `sigma`.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    others = [np.asarray(v, dtype=np.float64) for v in others]
    if not others:
        v_y = v1.copy()
    else:
        A = np.column_stack(others)
        if A.shape[0] != v1.size:
            raise DimensionError("loading vectors must share one length")
        for j in range(A.shape[1]):
            if np.linalg.matrix_rank(A[:, :j + 1]) <= j:
                raise RankDeficientError(f"interferent {j} is linearly dependent on interferents 0..{j - 1}")
        Q, _ = np.linalg.qr(A)
        v_y = v1 - Q @ (Q.T @ v1)
    nrm2 = float(v_y @ v_y)
    tiny = 1e-24 * max(float(v1 @ v1), 1e-300)
    if nrm2 <= tiny:
        return NasResult(np.zeros_like(v1), float("inf"))
    return NasResult(v_y, float(sigma ** 2 * weight ** 2 / nrm2))


def _abs_correlations(X, y):
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt(np.sum(Xc ** 2, axis=0))
    sy = np.sqrt(yc @ yc)
    num = Xc.T @ yc
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where((sx > 0) & (sy > 0), num / (sx * sy), 0.0)
    return np.abs(r)


def supervised_variable_select(X, y, k):
    """Indices of the `k` variables most correlated (in absolute value) with `y`."""
    X = as_data_matrix(X, min_cols=1)
    y = np.asarray(y, dtype=np.float64)
    if not 1 <= k <= X.shape[1]:
        raise TreeletError(f"k must be in 1..{X.shape[1]}, got {k}")
    r = _abs_correlations(X, y)
    return np.argsort(-r, kind="stable")[:k]


def t_statistic_ranking(X, labels, k):
    """Indices of the `k` variables with largest |Welch t| between two classes."""
    X = as_data_matrix(X, min_cols=1)
    labels, classes = _labels(labels, X.shape[0])
    if classes.size != 2:
        raise TreeletError("t-statistic ranking needs exactly two classes")
    a, b = X[labels == classes[0]], X[labels == classes[1]]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InsufficientDataError("each class needs at least 2 samples")
    se = np.sqrt(a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, (a.mean(axis=0) - b.mean(axis=0)) / se, 0.0)
    return np.argsort(-np.abs(t), kind="stable")[:k]


# --------------------------------------------------------------------------
# PLS1
# --------------------------------------------------------------------------


class PLSModel(NamedTuple):
    coef: np.ndarray
    intercept: float
    n_components: int


def pls_path(X, y, max_components):
    """NIPALS PLS1 on centred data.

    Returns
    -------
    x_mean, y_mean, coefs : (a_max + 1, p) regression vectors for 0..a_max
    components (a_max may stop short of `max_components` when the residual
    response vanishes).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = X.mean(axis=0), float(y.mean())
    E = X - xm
    f = y - ym
    scale = max(float(np.sqrt(np.sum(E ** 2))), 1e-300) * max(float(np.sqrt(f @ f)), 1e-300)
    W, P, q = [], [], []
    for _ in range(max_components):
        w = E.T @ f
        nw = float(np.sqrt(w @ w))
        if nw <= 1e-13 * scale:
            break
        w /= nw
        t = E @ w
        tt = float(t @ t)
        if tt <= 0:
            break
        p_ = E.T @ t / tt
        qa = float(f @ t) / tt
        E -= np.outer(t, p_)
        f = f - qa * t
        W.append(w)
        P.append(p_)
        q.append(qa)
    coefs = [np.zeros(X.shape[1])]
    if W:
        W_, P_, q_ = np.column_stack(W), np.column_stack(P), np.array(q)
        for a in range(1, len(W) + 1):
            R = W_[:, :a] @ np.linalg.inv(P_[:, :a].T @ W_[:, :a])
            coefs.append(R @ q_[:a])
    return xm, ym, np.array(coefs)


def pls_fit(X, y, n_components):
    """PLS1 regression with exactly (at most) `n_components` latent variables."""
    xm, ym, coefs = pls_path(X, y, n_components)
    a = len(coefs) - 1
    return PLSModel(coefs[a], ym - float(xm @ coefs[a]), a)


def pls_predict(model, X):
    return np.asarray(X, dtype=np.float64) @ model.coef + model.intercept


def pls_loo(X, y, max_components):
    """Leave-one-out squared prediction errors, shape (n, max_components + 1)."""
    X = as_data_matrix(X, min_rows=3, min_cols=1)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    out = np.empty((n, max_components + 1))
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        mask[i] = False
        xm, ym, coefs = pls_path(X[mask], y[mask], max_components)
        pred = ym + (X[i] - xm) @ coefs.T
        err = (pred - y[i]) ** 2
        out[i, :err.size] = err
        out[i, err.size:] = err[-1]
        mask[i] = True
    return out


def pls_fit_loo(X, y, max_components):
    """PLS1 with the component count (0..max) minimising the LOO error; ties go to fewer."""
    X = as_data_matrix(X, min_rows=3, min_cols=1)
    max_components = min(max_components, X.shape[0] - 2, X.shape[1])
    press = pls_loo(X, y, max_components).sum(axis=0)
    a = _argmin_first(press)
    return pls_fit(X, y, a), press


def _argmin_first(v, rtol=1e-12):
    best = float(np.min(v))
    return int(np.flatnonzero(v <= best + rtol * abs(best))[0])


# --------------------------------------------------------------------------
# regression comparison on the extended overlapping-loadings model
# --------------------------------------------------------------------------


def treelet_features(model, X_train, X_eval, level, n_features):
    """Coordinates of the `n_features` highest-variance scaling vectors at `level`."""
    Ytr = np.array(X_train, dtype=np.float64, order="C", copy=True)
    kernels.rotate_columns(Ytr, model.alphas, model.betas, model.thetas, 0, level, False)
    Yev = np.array(X_eval, dtype=np.float64, order="C", copy=True)
    kernels.rotate_columns(Yev, model.alphas, model.betas, model.thetas, 0, level, False)
    sidx = model.sum_index(level)
    var = Ytr[:, sidx].var(axis=0)
    cols = sidx[np.argsort(-var, kind="stable")[:n_features]]
    return Ytr[:, cols], Yev[:, cols]


class _LevelSweep:
    """Incremental rotation of train/test data along the tree levels."""

    def __init__(self, model, Xtr, Xte):
        self.model = model
        self.level = 0
        self.Ytr = np.array(Xtr, dtype=np.float64, order="C", copy=True)
        self.Yte = np.array(Xte, dtype=np.float64, order="C", copy=True)
        self.active = np.ones(model.p, dtype=bool)

    def advance(self, level):
        m = self.model
        if level < self.level:
            raise ValueError("sweep only moves forward")
        for A in (self.Ytr, self.Yte):
            kernels.rotate_columns(A, m.alphas, m.betas, m.thetas, self.level, level, False)
        self.active[m.detail_order[self.level:level]] = False
        self.level = level

    def features(self, n_features):
        sidx = np.flatnonzero(self.active)
        var = self.Ytr[:, sidx].var(axis=0)
        cols = sidx[np.argsort(-var, kind="stable")[:n_features]]
        return self.Ytr[:, cols], self.Yte[:, cols]


def _treelet_arm(Xtr, ytr, Xte, n_features, max_components, ladder_step):
    Xc, _ = center_columns(Xtr)
    model = fit_covariance(sample_covariance(Xc), EngineConfig())
    H = model.height
    cache = {}

    def best_of(levels):
        # smallest PRESS over (level, components); ties go to the smaller level
        _fill_ladder(model, Xtr, Xte, ytr, levels, n_features, max_components, cache)
        best = None
        for lev in sorted(set(levels)):
            v = float(np.min(cache[lev]))
            if best is None or v < best[0] * (1 - 1e-12):
                best = (v, lev)
        return best[1]

    # coarse ladder, then two refinements around the best rung
    lev = best_of(range(0, H + 1, ladder_step))
    fine = max(1, ladder_step // 5)
    lev = best_of([l for l in range(lev - ladder_step, lev + ladder_step + 1, fine) if 0 <= l <= H])
    lev = best_of([l for l in range(lev - fine, lev + fine + 1) if 0 <= l <= H])

    sweep = _LevelSweep(model, Xtr, Xte)
    sweep.advance(lev)
    Ftr, Fte = sweep.features(n_features)
    a = _argmin_first(cache[lev])
    pls = pls_fit(Ftr, ytr, a)
    return pls_predict(pls, Fte), lev, a


def _fill_ladder(model, Xtr, Xte, ytr, levels, n_features, max_components, cache):
    todo = sorted(l for l in set(levels) if l not in cache)
    if not todo:
        return
    sweep = _LevelSweep(model, Xtr, Xte)
    for lev in todo:
        sweep.advance(lev)
        Ftr, _ = sweep.features(n_features)
        cache[lev] = pls_loo(Ftr, ytr, max_components).sum(axis=0)


def _supervised_arm(Xtr, ytr, Xte, grid, max_components):
    n = Xtr.shape[0]
    grid = [k for k in grid if k <= Xtr.shape[1]]
    press = np.zeros((len(grid), max_components + 1))
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        mask[i] = False
        X_, y_ = Xtr[mask], ytr[mask]
        ranked = supervised_variable_select(X_, y_, max(grid))
        for g, k in enumerate(grid):
            cols = ranked[:k]
            xm, ym, coefs = pls_path(X_[:, cols], y_, max_components)
            pred = ym + (Xtr[i, cols] - xm) @ coefs.T
            err = (pred - ytr[i]) ** 2
            press[g, :err.size] += err
            press[g, err.size:] += err[-1]
        mask[i] = True
    flat = _argmin_first(press.ravel())
    g, a = divmod(flat, max_components + 1)
    cols = supervised_variable_select(Xtr, ytr, grid[g])
    pls = pls_fit(Xtr[:, cols], ytr, a)
    return pls_predict(pls, Xte[:, cols]), grid[g], a


def _pls_arm(Ftr, ytr, Fte, max_components):
    pls, _ = pls_fit_loo(Ftr, ytr, max_components)
    return pls_predict(pls, Fte), pls.n_components


class Figure4Row(NamedTuple):
    full_pls: float
    supervised_pls: float
    treelet_pls: float
    oracle_pls: float
    treelet_level: int
    supervised_k: int


def figure4_experiment(seed, reps, spec=None, n_train=100, n_test=500, n_features=50,
                       max_components=10, ladder_step=25, select_grid=(10, 20, 50, 100, 200)):
    """Test-set MSEP of four PLS variants over `reps` independent replicates.

    Arms: PLS on all variables; PLS on the variables most correlated with y
    (count chosen by LOO inside each fold); PLS on the `n_features`
    highest-variance treelet scaling coordinates (tree level chosen by LOO
    over a coarse ladder refined near its best rung); PLS on the projections
    onto the true loading vectors.
    """
    spec = spec or figure4_spec()

    def one(r):
        s_tr = int(child_rng(seed, "figure4", r, "train").integers(0, 2 ** 63))
        s_te = int(child_rng(seed, "figure4", r, "test").integers(0, 2 ** 63))
        Xtr, _, ytr = sample_mixture(spec, n_train, s_tr)
        Xte, _, yte = sample_mixture(spec, n_test, s_te)

        def msep(pred):
            return float(np.mean((pred - yte) ** 2))

        full, _ = _pls_arm(Xtr, ytr, Xte, max_components)
        sup, k, _ = _supervised_arm(Xtr, ytr, Xte, select_grid, max_components)
        tre, lev, _ = _treelet_arm(Xtr, ytr, Xte, n_features, max_components, ladder_step)
        V = spec.loadings
        orc, _ = _pls_arm(Xtr @ V.T, ytr, Xte @ V.T, max_components)
        return Figure4Row(msep(full), msep(sup), msep(tre), msep(orc), lev, k)

    return map_ordered(one, range(reps))


def figure4_csv(rows):
    buf = io.StringIO()
    buf.write("full_pls,supervised_pls,treelet_pls,oracle_pls\n")
    for r in rows:
        buf.write(f"{r.full_pls!r},{r.supervised_pls!r},{r.treelet_pls!r},{r.oracle_pls!r}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# two-way decomposition
# --------------------------------------------------------------------------


def two_way_classify(X_train, labels_train, X_test, K, level=None, config=None):
    """Two-class prediction from the top split of a tree built on samples.

    A treelet basis is fitted on the training variables; every sample is
    represented by its coordinates on the `K` highest-energy treelets. A
    second tree is then fitted on the samples (train and test together),
    using the uncentred Gram matrix of those features as covariance. The two
    clusters joined by its last merge are labelled by majority vote of their
    training members (ties go to the smaller label).
    """
    Xtr = as_data_matrix(X_train)
    Xte = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    labels, classes = _labels(labels_train, Xtr.shape[0])
    if classes.size != 2:
        raise TreeletError("two-way classification needs exactly two classes")
    if Xte.shape[1] != Xtr.shape[1]:
        raise DimensionError("train and test have different variable counts")
    config = config or EngineConfig()
    Xc, means = center_columns(Xtr)
    S = sample_covariance(Xc)
    p = S.shape[0]
    if not 1 <= K <= p:
        raise TreeletError(f"K must be in 1..{p}, got {K}")
    level = p - 1 if level is None else level
    var_model = fit_covariance(S, EngineConfig(config.similarity, level, config.angle_mode))
    Z = np.vstack([Xc, Xte - means])
    kernels.rotate_columns(Z, var_model.alphas, var_model.betas, var_model.thetas,
                           0, var_model.height, False)
    energy = np.sum(Z[:Xtr.shape[0]] ** 2, axis=0)
    F = Z[:, np.argsort(-energy, kind="stable")[:K]]

    G = F @ F.T / F.shape[1]
    N = G.shape[0]
    sample_model = fit_covariance(G, EngineConfig(config.similarity, None, config.angle_mode))
    last = sample_model.height
    clusters = sample_model.clusters(last - 1)
    a, b = int(sample_model.alphas[last - 1]), int(sample_model.betas[last - 1])
    branch = np.full(N, -1)
    branch[clusters[a]] = 0
    branch[clusters[b]] = 1
    # samples never merged (zero feature vector): attach to the closer branch centroid
    loose = np.flatnonzero(branch < 0)
    if loose.size:
        cents = np.array([F[branch == k].mean(axis=0) for k in (0, 1)])
        d = ((F[loose, None, :] - cents[None]) ** 2).sum(axis=2)
        branch[loose] = np.argmin(d, axis=1)
    ntr = Xtr.shape[0]
    votes = []
    for k in (0, 1):
        members = labels[branch[:ntr] == k]
        if members.size == 0:
            votes.append(None)
            continue
        counts = np.array([np.sum(members == c) for c in classes])
        votes.append(classes[int(np.argmax(counts))])
    for k in (0, 1):
        if votes[k] is None:
            warnings.warn(f"branch {k} holds no training samples; labelled by the other branch",
                          RuntimeWarning, stacklevel=2)
            votes[k] = votes[1 - k]
    lab = np.array(votes, dtype=classes.dtype)
    return lab[branch[ntr:]]
