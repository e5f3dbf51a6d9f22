"""Treelet construction and the transforms it defines.

A fitted `TreeletModel` is the ordered list of Jacobi rotations applied to
the most similar pair of active sum variables at each level. Level 0 is the
Dirac basis; level ``l`` applies rotations ``1..l``.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .exceptions import DegenerateInputError, DimensionError, TreeletError
from .matrix import SimilarityConfig, as_data_matrix, center_columns, sample_covariance

__all__ = [
    "EngineConfig",
    "RotationRecord",
    "TreeletModel",
    "Coefficients",
    "ScalingDetail",
    "fit",
    "fit_covariance",
    "select_pair",
    "forward",
    "inverse",
    "transform",
    "basis",
    "scaling_detail",
]

# variables whose variance is below this fraction of the largest variance are
# treated as constant and never merged
VAR_RTOL = 1e-12

ANGLE_MODES = ("adaptive", "haar")


@dataclass(frozen=True)
class EngineConfig:
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    height: Optional[int] = None  # None means full height p - 1
    angle_mode: str = "adaptive"

    def __post_init__(self):
        if self.angle_mode not in ANGLE_MODES:
            raise TreeletError(f"angle_mode must be one of {ANGLE_MODES}, got {self.angle_mode!r}")
        if self.height is not None and self.height < 1:
            raise TreeletError(f"height must be >= 1, got {self.height}")


class RotationRecord(NamedTuple):
    level: int
    alpha: int
    beta: int
    theta: float
    sum_slot: int


class Coefficients(NamedTuple):
    """Level-`level` coordinates of one vector (1-D fields) or a batch (2-D fields)."""

    level: int
    sum_index: np.ndarray
    sums: np.ndarray
    detail_index: np.ndarray
    details: np.ndarray

    def energy(self):
        return np.sum(self.sums ** 2, axis=-1) + np.sum(self.details ** 2, axis=-1)


class ScalingDetail(NamedTuple):
    scaling: np.ndarray  # p x (p - level), columns ordered by sum_index
    sum_index: np.ndarray
    scaling_support: list
    detail: np.ndarray  # p x level, columns in merge order
    detail_index: np.ndarray
    detail_support: list


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TreeletModel:
    p: int
    alphas: np.ndarray
    betas: np.ndarray
    thetas: np.ndarray
    sum_slots: np.ndarray
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    angle_mode: str = "adaptive"
    requested_height: Optional[int] = None
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    working_cov: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name, dtype in (("alphas", np.int64), ("betas", np.int64),
                            ("thetas", np.float64), ("sum_slots", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        L = len(self.thetas)
        if not (len(self.alphas) == len(self.betas) == len(self.sum_slots) == L):
            raise TreeletError("rotation arrays must have equal length")
        if L > self.p - 1:
            raise TreeletError(f"height {L} exceeds p - 1 = {self.p - 1}")
        if np.any(self.alphas >= self.betas) or np.any(self.alphas < 0) or np.any(self.betas >= self.p):
            raise TreeletError("rotation pairs must satisfy 0 <= alpha < beta < p")
        if np.any((self.sum_slots != self.alphas) & (self.sum_slots != self.betas)):
            raise TreeletError("sum_slot must equal alpha or beta")
        if np.any(np.abs(self.thetas) > np.pi / 4 + 1e-15):
            raise TreeletError("rotation angles must lie in [-pi/4, pi/4]")
        details = self.detail_order
        active = np.ones(self.p, dtype=bool)
        for lev in range(L):
            if not (active[self.alphas[lev]] and active[self.betas[lev]]):
                raise TreeletError(f"rotation {lev + 1} touches an already frozen detail index")
            active[details[lev]] = False

    @property
    def height(self):
        return len(self.thetas)

    @property
    def detail_order(self):
        """Index frozen as the detail coordinate at each level (merge order)."""
        return np.where(self.sum_slots == self.alphas, self.betas, self.alphas)

    @property
    def rotations(self):
        return [RotationRecord(lev + 1, int(a), int(b), float(t), int(s))
                for lev, (a, b, t, s) in enumerate(
                    zip(self.alphas, self.betas, self.thetas, self.sum_slots))]

    def check_level(self, level):
        if not 0 <= level <= self.height:
            raise DimensionError(f"level {level} outside 0..{self.height}")
        return int(level)

    def sum_index(self, level):
        """Sorted indices of the sum (scaling) coordinates at `level`."""
        level = self.check_level(level)
        active = np.ones(self.p, dtype=bool)
        active[self.detail_order[:level]] = False
        return np.flatnonzero(active)

    def clusters(self, level):
        """Map each sum index at `level` to the original variables it covers."""
        level = self.check_level(level)
        members = {i: [i] for i in range(self.p)}
        for lev in range(level):
            keep = int(self.sum_slots[lev])
            drop = int(self.detail_order[lev])
            members[keep] = members[keep] + members.pop(drop)
        return {k: np.array(sorted(v)) for k, v in members.items()}

    def merge_supports(self):
        """Support (original variables) of the detail function created at each level."""
        members = {i: [i] for i in range(self.p)}
        out = []
        for lev in range(self.height):
            keep = int(self.sum_slots[lev])
            drop = int(self.detail_order[lev])
            members[keep] = members[keep] + members.pop(drop)
            out.append(np.array(sorted(members[keep])))
        return out

    def truncated(self, level):
        """Model holding only the first `level` rotations."""
        level = self.check_level(level)
        return TreeletModel(self.p, self.alphas[:level], self.betas[:level],
                            self.thetas[:level], self.sum_slots[:level],
                            self.similarity, self.angle_mode)

    # -- serialisation -------------------------------------------------------

    def to_json(self):
        """JSON text; thetas carry 17 significant digits so replay is bit-exact."""
        head = {
            "p": int(self.p),
            "L": int(self.height),
            "similarity": self.similarity.to_dict(),
            "angle_mode": self.angle_mode,
        }
        lines = [json.dumps(head)[:-1] + ', "rotations": [']
        rows = []
        for r in self.rotations:
            rows.append(
                '  {"level": %d, "alpha": %d, "beta": %d, "theta": %s, "sum_slot": %d}'
                % (r.level, r.alpha, r.beta, format(r.theta, ".17g"), r.sum_slot))
        lines.append(",\n".join(rows))
        lines.append("]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        rots = sorted(d["rotations"], key=lambda r: r["level"])
        if len(rots) != d["L"]:
            raise TreeletError(f"model declares L={d['L']} but lists {len(rots)} rotations")
        if [r["level"] for r in rots] != list(range(1, len(rots) + 1)):
            raise TreeletError("rotation levels must be 1..L without gaps")
        return cls(
            p=int(d["p"]),
            alphas=[r["alpha"] for r in rots],
            betas=[r["beta"] for r in rots],
            thetas=[float(r["theta"]) for r in rots],
            sum_slots=[r["sum_slot"] for r in rots],
            similarity=SimilarityConfig.from_dict(d["similarity"]),
            angle_mode=d.get("angle_mode", "adaptive"),
        )


def _as_covariance(S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"covariance must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise TreeletError("covariance has non-finite entries")
    scale = max(float(np.max(np.abs(S))), 1e-300)
    if np.max(np.abs(S - S.T)) > 1e-12 * scale:
        raise TreeletError("covariance is not symmetric")
    if np.any(np.diag(S) < 0):
        raise TreeletError("covariance has a negative diagonal entry")
    return np.ascontiguousarray(0.5 * (S + S.T))


def fit_covariance(S, config=None):
    """Build the treelet tree on a covariance matrix.

    Parameters
    ----------
    S : array (p, p)
        Symmetric covariance (sample or population).
    config : EngineConfig, optional
        Similarity measure, requested height (default ``p - 1``) and angle mode.

    Returns
    -------
    TreeletModel
        Fewer rotations than requested are returned when only constant
        variables remain to be merged.

    Raises
    ------
    DegenerateInputError
        If no pair of positive-variance variables exists.
    """
    config = config or EngineConfig()
    S = _as_covariance(S)
    p = S.shape[0]
    if p < 2:
        raise DimensionError(f"need p >= 2 variables, got {p}")
    height = p - 1 if config.height is None else config.height
    if not 1 <= height <= p - 1:
        raise TreeletError(f"height must be in 1..{p - 1}, got {height}")
    var_tol = VAR_RTOL * float(np.max(np.diag(S)))
    alphas, betas, thetas, slots, resid, C = kernels.fit_kernel(
        S, height, config.similarity.code, float(config.similarity.lam),
        config.angle_mode == "haar", var_tol)
    if len(thetas) == 0:
        raise DegenerateInputError("no pair of variables with positive variance to merge")
    return TreeletModel(p, alphas, betas, thetas, slots, config.similarity,
                        config.angle_mode, requested_height=height,
                        residuals=np.asarray(resid), working_cov=C)


def fit(X, config=None):
    """Centre the n x p data matrix `X`, form its sample covariance and fit."""
    X = as_data_matrix(X)
    Xc, _ = center_columns(X)
    return fit_covariance(sample_covariance(Xc), config)


def select_pair(M, active):
    """Exhaustive arg-max of `M` over unordered active pairs, lexicographic ties."""
    idx = np.array(sorted(set(int(i) for i in active)))
    if idx.size < 2:
        raise TreeletError("need at least two active indices")
    sub = np.asarray(M, dtype=np.float64)[np.ix_(idx, idx)].copy()
    sub[np.tril_indices(idx.size)] = -np.inf
    flat = int(np.argmax(sub))
    i, j = divmod(flat, idx.size)
    return int(idx[i]), int(idx[j])


def _rotate(A, model, start, stop, inverse=False):
    return kernels.rotate_columns(A, model.alphas, model.betas, model.thetas,
                                  start, stop, inverse)


def transform(X, model, level=None):
    """Rotated coordinates ``X @ B_level``: column k is the coefficient on basis column k."""
    level = model.height if level is None else model.check_level(level)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.p:
        raise DimensionError(f"expected {model.p} variables, got {X.shape[-1]}")
    Y = np.array(np.atleast_2d(X), dtype=np.float64, order="C", copy=True)
    _rotate(Y, model, 0, level)
    return Y[0] if X.ndim == 1 else Y


def forward(x, model, level=None):
    """Split the level-`level` coordinates of `x` into sum and detail parts."""
    level = model.height if level is None else model.check_level(level)
    Y = transform(x, model, level)
    sidx = model.sum_index(level)
    didx = model.detail_order[:level].copy()
    return Coefficients(level, sidx, Y[..., sidx], didx, Y[..., didx])


def inverse(coeffs, model):
    """Reconstruct the original vector(s) from `Coefficients`."""
    level = model.check_level(coeffs.level)
    sidx = model.sum_index(level)
    didx = model.detail_order[:level]
    if not (np.array_equal(sidx, coeffs.sum_index) and np.array_equal(didx, coeffs.detail_index)):
        raise DimensionError("coefficient layout does not match the model at this level")
    sums = np.asarray(coeffs.sums, dtype=np.float64)
    batch = sums.ndim == 2
    Y = np.zeros((sums.shape[0] if batch else 1, model.p))
    Y[:, sidx] = np.atleast_2d(sums)
    Y[:, didx] = np.atleast_2d(np.asarray(coeffs.details, dtype=np.float64))
    _rotate(Y, model, 0, level, inverse=True)
    return Y if batch else Y[0]


def basis(model, level=None):
    """Orthonormal basis ``B_level`` (columns are treelets)."""
    level = model.height if level is None else model.check_level(level)
    B = np.eye(model.p)
    return _rotate(B, model, 0, level)


def scaling_detail(model, level=None):
    """Partition ``B_level`` into scaling and detail functions with their supports."""
    level = model.height if level is None else model.check_level(level)
    B = basis(model, level)
    sidx = model.sum_index(level)
    didx = model.detail_order[:level].copy()
    clusters = model.clusters(level)
    merges = model.merge_supports()[:level]
    return ScalingDetail(B[:, sidx], sidx, [clusters[int(i)] for i in sidx],
                         B[:, didx], didx, merges)
