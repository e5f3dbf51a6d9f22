"""Synthetic covariance models, their samplers and closed-form oracles.

Two families are provided:

* block models, ``Sigma = C + sigma^2 I`` with C constant on blocks of
  exchangeable variables (optionally followed by ``p0`` pure-noise variables);
* linear mixtures ``x = sum_j u_j v_j + sigma z`` with response
  ``y = sum_j alpha_j u_j + eps``.

The oracles give exact rotation angles, coefficient variances and
correlations for merges inside the block model, and are used to check the
engine on population covariances.
"""

import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ._parallel import map_ordered
from ._rng import child_rng
from .engine import EngineConfig, basis, fit_covariance
from .exceptions import ModelInvalidError, TreeletError
from .matrix import center_columns, sample_covariance

__all__ = [
    "BlockModelSpec",
    "MixtureModelSpec",
    "ConvergenceTable",
    "block_covariance",
    "psd_factor",
    "sample_block",
    "factor_covariance",
    "mixture_covariance",
    "sample_mixture",
    "theorem2_condition",
    "merge_oracle",
    "coeff_variance_oracle",
    "correlation_bound_oracle",
    "block_recovery_event",
    "equal_block_family",
    "convergence_experiment",
    "example1_spec",
    "example2_spec",
    "example3_spec",
    "figure4_spec",
    "example2_block_spec",
    "example3_block_spec",
]


# --------------------------------------------------------------------------
# block model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockModelSpec:
    """Parameters of a block covariance model.

    `between` is a K x K matrix of between-block covariances (its diagonal is
    ignored). `blocks` optionally places each block on explicit variable
    indices; by default blocks are contiguous and the `p0` noise variables
    come last.
    """

    sizes: tuple
    within_var: tuple
    between: Optional[tuple] = None
    noise_var: float = 0.0
    p0: int = 0
    blocks: Optional[tuple] = None
    p_total: Optional[int] = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        wv = tuple(float(v) for v in self.within_var)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "within_var", wv)
        K = len(sizes)
        if K < 1 or len(wv) != K:
            raise ModelInvalidError("sizes and within_var must be nonempty and of equal length")
        if any(s < 1 for s in sizes):
            raise ModelInvalidError("block sizes must be >= 1")
        if any(not v > 0 for v in wv):
            raise ModelInvalidError("within-block variances must be > 0")
        if self.noise_var < 0 or self.p0 < 0:
            raise ModelInvalidError("noise_var and p0 must be nonnegative")
        between = np.zeros((K, K)) if self.between is None else np.array(self.between, dtype=float)
        if between.shape != (K, K) or not np.allclose(between, between.T, rtol=0, atol=0):
            raise ModelInvalidError("between must be a symmetric K x K matrix")
        np.fill_diagonal(between, 0.0)
        object.__setattr__(self, "between", tuple(map(tuple, between)))
        if self.blocks is not None:
            blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
            if [len(b) for b in blocks] != list(sizes):
                raise ModelInvalidError("explicit blocks must match sizes")
            object.__setattr__(self, "blocks", blocks)
            p = self.p_total if self.p_total is not None else sum(sizes) + self.p0
            used = [i for b in blocks for i in b]
            if len(set(used)) != len(used) or min(used) < 0 or max(used) >= p:
                raise ModelInvalidError("explicit blocks must be disjoint indices inside 0..p-1")
            object.__setattr__(self, "p_total", int(p))
            object.__setattr__(self, "p0", int(p - len(used)))

    @property
    def K(self):
        return len(self.sizes)

    @property
    def p(self):
        return sum(self.sizes) + self.p0

    @property
    def sigma(self):
        return float(np.sqrt(self.noise_var))

    @property
    def within_sd(self):
        return np.sqrt(np.array(self.within_var))

    @property
    def between_matrix(self):
        return np.array(self.between)

    @property
    def block_indices(self):
        if self.blocks is not None:
            return [np.array(b) for b in self.blocks]
        edges = np.cumsum((0,) + self.sizes)
        return [np.arange(edges[k], edges[k + 1]) for k in range(self.K)]

    @property
    def noise_indices(self):
        used = np.zeros(self.p, dtype=bool)
        for b in self.block_indices:
            used[b] = True
        return np.flatnonzero(~used)

    def block_of(self):
        """Block id per variable, -1 for noise variables."""
        lab = np.full(self.p, -1)
        for k, b in enumerate(self.block_indices):
            lab[b] = k
        return lab

    def to_dict(self):
        d = {
            "sizes": list(self.sizes),
            "within_var": list(self.within_var),
            "between": [list(r) for r in self.between],
            "noise_var": self.noise_var,
            "p0": self.p0,
        }
        if self.blocks is not None:
            d["blocks"] = [list(b) for b in self.blocks]
            d["p_total"] = self.p_total
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(sizes=d["sizes"], within_var=d["within_var"], between=d.get("between"),
                   noise_var=float(d.get("noise_var", 0.0)), p0=int(d.get("p0", 0)),
                   blocks=d.get("blocks"), p_total=d.get("p_total"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def psd_factor(S, rtol=1e-10):
    """Symmetric square-root factor F with ``F @ F.T == S``; rejects indefinite `S`."""
    S = np.asarray(S, dtype=np.float64)
    w, V = np.linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(S))))
    if w[0] < -rtol * scale:
        raise ModelInvalidError(f"covariance is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def block_covariance(spec):
    """Population covariance ``C + sigma^2 I`` of a block model."""
    p = spec.p
    C = np.zeros((p, p))
    blocks = spec.block_indices
    B = spec.between_matrix
    for i, bi in enumerate(blocks):
        C[np.ix_(bi, bi)] = spec.within_var[i]
        for j, bj in enumerate(blocks):
            if i != j:
                C[np.ix_(bi, bj)] = B[i, j]
    S = C + spec.noise_var * np.eye(p)
    psd_factor(S)
    return S


def sample_block(spec, n, seed):
    """`n` Gaussian draws from the block model."""
    F = psd_factor(block_covariance(spec))
    Z = child_rng(seed, "block-sample").standard_normal((n, spec.p))
    return Z @ F.T


def theorem2_condition(spec):
    """Sufficient condition for block recovery.

    Returns ``(holds, lhs, rhs)`` with lhs the largest between-block
    correlation ``sigma_ij / (sigma_i sigma_j)`` and
    ``rhs = 1 / sqrt(1 + 3 max(delta^2, delta^4))``, ``delta = sigma / min_k sigma_k``.
    """
    sd = spec.within_sd
    if spec.K > 1:
        R = spec.between_matrix / np.outer(sd, sd)
        off = R[~np.eye(spec.K, dtype=bool)]
        lhs = float(np.max(off))
    else:
        lhs = float("-inf")
    delta = spec.sigma / float(np.min(sd))
    rhs = 1.0 / np.sqrt(1.0 + 3.0 * max(delta ** 2, delta ** 4))
    return bool(lhs < rhs), lhs, float(rhs)


class MergeOracle(NamedTuple):
    theta: float
    sum_weights: np.ndarray
    diff_weights: np.ndarray


def merge_oracle(m, n):
    """Exact merge of two sum variables of cluster sizes `m` (alpha slot) and `n`.

    The unconstrained angle is ``arctan(sqrt(n/m))``; when ``n > m`` it is
    shifted by ``-pi/2`` into [-pi/4, pi/4] and the sum lands in the beta slot.
    Weights are expressed on the pair (u, v) of merged sum variables.
    """
    if m < 1 or n < 1:
        raise TreeletError("cluster sizes must be >= 1")
    theta = np.arctan(np.sqrt(n / m))
    if theta > np.pi / 4:
        theta -= np.pi / 2
    r = np.sqrt(m + n)
    return MergeOracle(float(theta), np.array([np.sqrt(m), np.sqrt(n)]) / r,
                       np.array([-np.sqrt(n), np.sqrt(m)]) / r)


def coeff_variance_oracle(m, n, sigma_k, sigma):
    """Variances ``(V{s}, V{d})`` of the sum and difference of a within-block merge.

    ``V{s} = (m + n) sigma_k^2 + sigma^2`` and
    ``V{d} = sigma^2 (m^2 + n^2) / (m n (m + n))``. The detail formula is
    returned as stated but is exact only for m = n = 1: with uniform sum
    weights the difference coefficient has variance ``sigma^2`` for every
    (m, n).
    """
    if m < 1 or n < 1:
        raise TreeletError("cluster sizes must be >= 1")
    vs = (m + n) * sigma_k ** 2 + sigma ** 2
    vd = sigma ** 2 * (m ** 2 + n ** 2) / (m * n * (m + n))
    return float(vs), float(vd)


def correlation_bound_oracle(spec, m, n, i, j=None):
    """Population correlation of two cluster sums of sizes `m` and `n`.

    With ``j`` omitted (or equal to ``i``) both clusters sit in block `i`
    (within-block value); otherwise the clusters sit in blocks `i` and `j`.
    """
    sd = spec.within_sd
    sigma2 = spec.noise_var
    if j is None or j == i:
        d2 = sigma2 / sd[i] ** 2
        return float(1.0 / np.sqrt(1.0 + (m + n) / (m * n) * d2 + d2 ** 2 / (m * n)))
    di2 = sigma2 / sd[i] ** 2
    dj2 = sigma2 / sd[j] ** 2
    r = spec.between_matrix[i, j] / (sd[i] * sd[j])
    return float(r * np.sqrt(m * n) / (np.sqrt(m + di2) * np.sqrt(n + dj2)))


def block_recovery_event(model, spec, cov):
    """True iff each of the K highest-variance scaling functions at level
    ``p - K`` lives inside a single true block.

    Variances are taken under `cov` (usually the sample covariance the model
    was fitted on).
    """
    level = spec.p - spec.K
    if model.height < level:
        raise TreeletError(f"model height {model.height} < p - K = {level}")
    B = basis(model, level)
    sidx = model.sum_index(level)
    var = np.einsum("ij,ij->j", B[:, sidx], cov @ B[:, sidx])
    top = sidx[np.argsort(-var, kind="stable")[:spec.K]]
    clusters = model.clusters(level)
    lab = spec.block_of()
    for s in top:
        ids = np.unique(lab[clusters[int(s)]])
        if ids.size != 1 or ids[0] < 0:
            return False
    return True


def equal_block_family(p, K=4, within_var=1.0, between_corr=0.2, noise_var=1.0):
    """K blocks covering all p variables, sizes as equal as possible (larger first)."""
    if p < K:
        raise TreeletError(f"p={p} is smaller than K={K}")
    sizes = tuple(p // K + (1 if k < p % K else 0) for k in range(K))
    B = np.full((K, K), between_corr * within_var)
    return BlockModelSpec(sizes=sizes, within_var=(within_var,) * K,
                          between=B, noise_var=noise_var)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # (p, n, success_fraction, reps)
    threshold: float = 0.9

    def fraction(self, p, n):
        for row in self.rows:
            if row[0] == p and row[1] == n:
                return row[2]
        raise KeyError((p, n))

    def n_star(self, p):
        """Smallest grid n whose success fraction reaches the threshold (None if none does)."""
        for row in sorted(r for r in self.rows if r[0] == p):
            if row[2] >= self.threshold:
                return row[1]
        return None

    def to_csv(self):
        buf = io.StringIO()
        buf.write("p,n,success_fraction,reps,n_star\n")
        for p, n, frac, reps in self.rows:
            ns = self.n_star(p)
            buf.write(f"{p},{n},{frac!r},{reps},{'' if ns is None else ns}\n")
        return buf.getvalue()


def convergence_experiment(p_grid, n_grid, reps, seed, family=equal_block_family,
                           threshold=0.9):
    """Empirical probability of exact block recovery over a (p, n) grid."""
    if not p_grid or not n_grid or reps < 1:
        raise TreeletError("grids must be nonempty and reps >= 1")
    table = ConvergenceTable(threshold=threshold)
    for p in p_grid:
        spec = family(p)
        F = psd_factor(block_covariance(spec))
        cfg = EngineConfig(height=spec.p - spec.K)
        for n in n_grid:
            def one(r, p=p, n=n, spec=spec, F=F):
                Z = child_rng(seed, "convergence", p, n, r).standard_normal((n, spec.p))
                Xc, _ = center_columns(Z @ F.T)
                S = sample_covariance(Xc)
                return block_recovery_event(fit_covariance(S, cfg), spec, S)

            hits = map_ordered(one, range(reps))
            table.rows.append((int(p), int(n), sum(hits) / reps, int(reps)))
    return table


# --------------------------------------------------------------------------
# linear mixture model
# --------------------------------------------------------------------------

FACTOR_LAWS = ("gaussian", "example2", "example3")


@dataclass(frozen=True)
class MixtureModelSpec:
    """``x = sum_j u_j v_j + sigma z``, ``y = sum_j alpha_j u_j + eps``."""

    loadings: np.ndarray  # K x p, row j is v_j
    factor_law: str = "gaussian"
    factor_params: dict = field(default_factory=dict)
    sigma: float = 1.0
    alpha: tuple = ()
    response_sd: float = 0.0

    def __post_init__(self):
        V = np.array(self.loadings, dtype=np.float64)
        if V.ndim != 2:
            raise ModelInvalidError("loadings must be a K x p matrix")
        V.setflags(write=False)
        object.__setattr__(self, "loadings", V)
        if self.factor_law not in FACTOR_LAWS:
            raise ModelInvalidError(f"unknown factor law {self.factor_law!r}")
        if np.linalg.matrix_rank(V) < V.shape[0]:
            raise ModelInvalidError("loading vectors must be linearly independent")
        alpha = tuple(float(a) for a in self.alpha) or (0.0,) * V.shape[0]
        if len(alpha) != V.shape[0]:
            raise ModelInvalidError("need one response weight per component")
        object.__setattr__(self, "alpha", alpha)
        if self.sigma < 0 or self.response_sd < 0:
            raise ModelInvalidError("noise levels must be nonnegative")

    @property
    def K(self):
        return self.loadings.shape[0]

    @property
    def p(self):
        return self.loadings.shape[1]


def _draw_factors(spec, n, rng):
    law, prm = spec.factor_law, spec.factor_params
    if law == "gaussian":
        var = np.asarray(prm.get("variances", np.ones(spec.K)), dtype=float)
        if "constant" in prm:
            return np.tile(np.asarray(prm["constant"], dtype=float), (n, 1))
        return rng.standard_normal((n, spec.K)) * np.sqrt(var)
    if law == "example2":
        u1 = rng.standard_normal(n) * np.sqrt(prm["var1"])
        u2 = rng.standard_normal(n) * np.sqrt(prm["var2"])
        return np.column_stack([u1, u2, prm["c1"] * u1 + prm["c2"] * u2])
    # example3
    u1 = np.where(rng.random(n) < 0.5, prm["u1"], -prm["u1"])
    u2 = (rng.random(n) < prm["p2"]).astype(float)
    u3 = (rng.random(n) < prm["p3"]).astype(float)
    return np.column_stack([u1, u2, u3])


def factor_covariance(spec):
    """Population covariance of the factors u."""
    law, prm = spec.factor_law, spec.factor_params
    if law == "gaussian":
        if "constant" in prm:
            return np.zeros((spec.K, spec.K))
        return np.diag(np.asarray(prm.get("variances", np.ones(spec.K)), dtype=float))
    if law == "example2":
        v1, v2, c1, c2 = prm["var1"], prm["var2"], prm["c1"], prm["c2"]
        return np.array([[v1, 0.0, c1 * v1],
                         [0.0, v2, c2 * v2],
                         [c1 * v1, c2 * v2, c1 ** 2 * v1 + c2 ** 2 * v2]])
    return np.diag([prm["u1"] ** 2, prm["p2"] * (1 - prm["p2"]), prm["p3"] * (1 - prm["p3"])])


def mixture_covariance(spec):
    V = spec.loadings
    return V.T @ factor_covariance(spec) @ V + spec.sigma ** 2 * np.eye(spec.p)


def sample_mixture(spec, n, seed):
    """Draw `n` observations.

    Returns
    -------
    X : (n, p) data, U : (n, K) factors, y : (n,) responses
    """
    rng = child_rng(seed, "mixture")
    U = _draw_factors(spec, n, rng)
    Z = rng.standard_normal((n, spec.p))
    X = U @ spec.loadings + spec.sigma * Z
    y = U @ np.asarray(spec.alpha)
    if spec.response_sd > 0:
        y = y + spec.response_sd * rng.standard_normal(n)
    return X, U, y


def _indicator(p, idx):
    v = np.zeros(p)
    v[list(idx)] = 1.0
    return v


EXAMPLE2_PARAMS = {"var1": 290.0, "var2": 300.0, "c1": -0.3, "c2": 0.925}
EXAMPLE3_BLOCKS = (range(0, 10), range(10, 50), range(50, 100), range(200, 400))


def example1_spec(p0=5, sigma=1.0):
    """Uncorrelated factors on non-overlapping blocks of sizes 4, 4, 2 plus `p0` noise variables."""
    p = 10 + p0
    V = np.array([_indicator(p, range(0, 4)), _indicator(p, range(4, 8)), _indicator(p, range(8, 10))])
    var3 = EXAMPLE2_PARAMS["c1"] ** 2 * 290.0 + EXAMPLE2_PARAMS["c2"] ** 2 * 300.0
    return MixtureModelSpec(V, "gaussian", {"variances": [290.0, 300.0, var3]}, sigma=sigma)


def example2_spec(sigma=1.0):
    """Correlated factors ``u3 = c1 u1 + c2 u2`` on blocks of sizes 4, 4, 2 (p = 10)."""
    V = np.array([_indicator(10, range(0, 4)), _indicator(10, range(4, 8)), _indicator(10, range(8, 10))])
    return MixtureModelSpec(V, "example2", dict(EXAMPLE2_PARAMS), sigma=sigma)


def example3_spec(p=500, sigma=0.5, alpha=(0.0, 0.0, 0.0)):
    """Overlapping loadings ``v1 = I(B1)+I(B2)``, ``v2 = I(B2)+I(B3)``, ``v3 = I(B4)``
    with binary / sign factors."""
    if p < 400:
        raise ModelInvalidError("example 3 needs p >= 400")
    b1, b2, b3, b4 = EXAMPLE3_BLOCKS
    V = np.array([_indicator(p, b1) + _indicator(p, b2),
                  _indicator(p, b2) + _indicator(p, b3),
                  _indicator(p, b4)])
    return MixtureModelSpec(V, "example3", {"u1": 0.5, "p2": 0.4, "p3": 0.3},
                            sigma=sigma, alpha=alpha)


def figure4_spec():
    """Example 3 with 1500 extra noise variables (p = 2000) and response y = 2 u1."""
    return example3_spec(p=2000, sigma=0.5, alpha=(2.0, 0.0, 0.0))


def example2_block_spec():
    """Example 2 population written as a block model."""
    cov = factor_covariance(example2_spec())
    return BlockModelSpec(sizes=(4, 4, 2), within_var=np.diag(cov),
                          between=cov * (1 - np.eye(3)), noise_var=1.0)


def example3_block_spec(p=500, sigma=0.5):
    """Example 3 population as a block model with blocks at their true positions."""
    s1, s2, s3 = 0.25, 0.24, 0.21
    between = np.zeros((4, 4))
    between[0, 1] = between[1, 0] = s1
    between[1, 2] = between[2, 1] = s2
    return BlockModelSpec(sizes=(10, 40, 50, 200), within_var=(s1, s1 + s2, s2, s3),
                          between=between, noise_var=sigma ** 2,
                          blocks=tuple(tuple(b) for b in EXAMPLE3_BLOCKS), p_total=p)
