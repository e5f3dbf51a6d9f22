"""Bootstrap stability of the treelet transform.

The sample covariance is resampled B times; replicates whose sup-norm
distance to the sample covariance is within the (1 - alpha) quantile of all
such distances form the confidence set. Treelets fitted on the accepted
replicates give per-coordinate bands for the highest-energy loading vectors.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from ._rng import child_rng
from .engine import EngineConfig, basis, fit_covariance
from .exceptions import EmptyConfidenceSetError, InsufficientDataError, TreeletError
from .matrix import as_data_matrix, center_columns, sample_covariance

__all__ = [
    "BootstrapConfig",
    "ConfidenceSummary",
    "bootstrap_covariances",
    "sup_distances",
    "delta_quantile",
    "top_loadings",
    "match_and_align",
    "confidence_set_loadings",
    "bands_contain",
    "population_coverage_trial",
    "merge_agreement_rate",
    "bands_csv",
]


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    alpha: float = 0.05
    seed: int = 0
    level: int = 1
    top_k: int = 2
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise TreeletError(f"replicates must be >= 1, got {self.replicates}")
        if not 0 < self.alpha < 1:
            raise TreeletError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.level < 0 or self.top_k < 1:
            raise TreeletError("level must be >= 0 and top_k >= 1")


@dataclass(frozen=True)
class ConfidenceSummary:
    delta_n: float
    distances: np.ndarray  # per replicate, in replicate order
    accepted: np.ndarray  # replicate ids inside the confidence set
    point: np.ndarray  # (top_k, p) point-estimate loadings
    lower: np.ndarray  # (top_k, p)
    upper: np.ndarray  # (top_k, p)
    flips: np.ndarray  # (accepted, top_k) True where a replicate loading was negated
    loadings: np.ndarray = field(repr=False)  # (accepted, top_k, p), aligned

    @property
    def accepted_count(self):
        return int(self.accepted.size)


def _replicate_cov(X, seed, b):
    n = X.shape[0]
    idx = child_rng(seed, "bootstrap", b).integers(0, n, size=n)
    Xc, _ = center_columns(X[idx])
    return sample_covariance(Xc)


def bootstrap_covariances(X, cfg):
    """`cfg.replicates` sample covariances of rows resampled with replacement.

    Replicate ``b`` draws from its own stream ``(seed, "bootstrap", b)``.
    """
    X = as_data_matrix(X, min_cols=1)
    if X.shape[0] < 2:
        raise InsufficientDataError("bootstrap needs n >= 2")
    return map_ordered(lambda b: _replicate_cov(X, cfg.seed, b), range(cfg.replicates))


def sup_distances(S, covs):
    return np.array([float(np.max(np.abs(C - S))) for C in covs])


def _order_index(B, alpha):
    # smallest k with k / B >= 1 - alpha; rounding guards (1 - alpha) * B
    # landing a hair above an integer
    k = int(np.ceil(round((1.0 - alpha) * B, 9)))
    return min(max(k, 1), B)


def delta_quantile(X, covs, alpha):
    """The ceil((1 - alpha) B)-th smallest sup-norm distance to the sample covariance."""
    if len(covs) == 0:
        raise TreeletError("no bootstrap covariances given")
    if not 0 < alpha < 1:
        raise TreeletError(f"alpha must be in (0, 1), got {alpha}")
    Xc, _ = center_columns(as_data_matrix(X, min_cols=1))
    d = np.sort(sup_distances(sample_covariance(Xc), covs))
    return float(d[_order_index(len(d), alpha) - 1])


def top_loadings(S, config, level, k):
    """The `k` highest-energy columns of ``B_level`` fitted on `S`, energy order.

    Returns
    -------
    loadings : (k, p) array, energies : (k,) array
    """
    p = S.shape[0]
    if not 1 <= k <= p:
        raise TreeletError(f"top_k must be in 1..{p}, got {k}")
    if level == 0:
        B = np.eye(p)
    else:
        model = fit_covariance(S, EngineConfig(config.similarity, level, config.angle_mode))
        B = basis(model, model.height)
    energy = np.einsum("ij,ij->j", B, S @ B)
    order = np.argsort(-energy, kind="stable")[:k]
    return B[:, order].T.copy(), energy[order]


def match_and_align(reference, candidates):
    """Pair each reference loading with a candidate and fix its sign.

    Candidates (rows, in decreasing energy) are assigned greedily to the
    still-free reference row with the largest ``|inner product|``; each is
    then negated if its inner product with that reference is negative.

    Returns
    -------
    aligned : array shaped like `reference`, flips : bool array per reference row
    """
    reference = np.asarray(reference, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    k = reference.shape[0]
    free = list(range(k))
    aligned = np.empty_like(reference)
    flips = np.zeros(k, dtype=bool)
    for c in candidates[:k]:
        dots = reference[free] @ c
        j = int(np.argmax(np.abs(dots)))
        r = free.pop(j)
        flips[r] = dots[j] < 0
        aligned[r] = -c if flips[r] else c
    return aligned, flips


def confidence_set_loadings(X, cfg):
    """Bootstrap bands for the `cfg.top_k` highest-energy treelets at `cfg.level`.

    Raises
    ------
    EmptyConfidenceSetError
        If no replicate falls inside the confidence set.
    """
    X = as_data_matrix(X)
    Xc, _ = center_columns(X)
    S = sample_covariance(Xc)
    point, _ = top_loadings(S, cfg.engine, cfg.level, cfg.top_k)
    covs = bootstrap_covariances(X, cfg)
    dist = sup_distances(S, covs)
    delta = float(np.sort(dist)[_order_index(len(dist), cfg.alpha) - 1])
    accepted = np.flatnonzero(dist <= delta)
    if accepted.size == 0:
        raise EmptyConfidenceSetError("no bootstrap replicate inside the confidence set")

    def one(b):
        loads, _ = top_loadings(covs[b], cfg.engine, cfg.level, cfg.top_k)
        return match_and_align(point, loads)

    res = map_ordered(one, accepted)
    loadings = np.stack([r[0] for r in res])
    flips = np.stack([r[1] for r in res])
    lower, upper = np.quantile(loadings, [cfg.alpha / 2, 1 - cfg.alpha / 2], axis=0)
    return ConfidenceSummary(delta, dist, accepted, point, lower, upper, flips, loadings)


def bands_contain(summary, loadings, atol=1e-12):
    """True iff every (matched, sign-aligned) row of `loadings` lies inside the bands."""
    aligned, _ = match_and_align(summary.point, loadings)
    return bool(np.all((aligned >= summary.lower - atol) & (aligned <= summary.upper + atol)))


def population_coverage_trial(sigma, n, cfg, seed):
    """One coverage trial: draw n Gaussian rows from `sigma`, build bands and
    check whether the population treelets fall inside them."""
    w, V = np.linalg.eigh(sigma)
    F = V * np.sqrt(np.clip(w, 0.0, None))
    X = child_rng(seed, "coverage-data").standard_normal((n, sigma.shape[0])) @ F.T
    summary = confidence_set_loadings(X, cfg)
    target, _ = top_loadings(np.asarray(sigma, dtype=np.float64), cfg.engine, cfg.level, cfg.top_k)
    return bands_contain(summary, target)


def merge_agreement_rate(sigma, n, reps, seed, level=None, config=None):
    """Fraction of Gaussian samples of size `n` whose first `level` merges
    (pairs, in order) equal those of the population tree."""
    config = config or EngineConfig()
    p = sigma.shape[0]
    level = p - 1 if level is None else level
    cfg = EngineConfig(config.similarity, level, config.angle_mode)
    ref = fit_covariance(sigma, cfg)
    w, V = np.linalg.eigh(sigma)
    F = V * np.sqrt(np.clip(w, 0.0, None))

    def one(r):
        X = child_rng(seed, "agreement", n, r).standard_normal((n, p)) @ F.T
        Xc, _ = center_columns(X)
        m = fit_covariance(sample_covariance(Xc), cfg)
        return (m.height == ref.height and np.array_equal(m.alphas, ref.alphas)
                and np.array_equal(m.betas, ref.betas))

    return sum(map_ordered(one, range(reps))) / reps


def bands_csv(summary):
    """CSV ``treelet_rank,coordinate,lower,point,upper`` (rank 1 = highest energy)."""
    buf = io.StringIO()
    buf.write("treelet_rank,coordinate,lower,point,upper\n")
    k, p = summary.point.shape
    for r in range(k):
        for j in range(p):
            buf.write(f"{r + 1},{j},{float(summary.lower[r, j])!r},"
                      f"{float(summary.point[r, j])!r},{float(summary.upper[r, j])!r}\n")
    return buf.getvalue()
