"""Dense symmetric-matrix primitives: centering, covariance, correlation,
similarity and the 2x2 Jacobi rotation."""

from dataclasses import dataclass

import numpy as np

from .exceptions import (DimensionError, InsufficientDataError,
                         NonFiniteInputError, TreeletError)
from .kernels import KIND_CODES, jacobi_angle_scalar

__all__ = [
    "SimilarityConfig",
    "as_data_matrix",
    "center_columns",
    "sample_covariance",
    "correlation",
    "correlation_matrix",
    "similarity_matrix",
    "jacobi_angle",
    "rotate_covariance",
    "rotate_coordinates",
]


@dataclass(frozen=True)
class SimilarityConfig:
    """Merge-priority measure.

    kind is ``"corr"`` (signed correlation), ``"abscorr"`` (absolute
    correlation) or ``"corr+cov"`` (``|rho_ij| + lam * |Sigma_ij|``).
    `lam` is only read by the last kind.
    """

    kind: str = "corr"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise TreeletError(
                f"unknown similarity kind {self.kind!r}; expected one of {sorted(KIND_CODES)}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise TreeletError(f"lambda must be a nonnegative number, got {self.lam!r}")

    @property
    def code(self):
        return KIND_CODES[self.kind]

    def to_dict(self):
        return {"kind": self.kind, "lambda": float(self.lam)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], lam=float(d.get("lambda", 0.0)))


def _check_finite(X):
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFiniteInputError(f"non-finite value {X[r, c]!r} at row {r}, column {c}")


def as_data_matrix(X, min_rows=2, min_cols=2):
    """Validate `X` as an n x p float64 data matrix and return it."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"data matrix must be 2-D, got shape {X.shape}")
    _check_finite(X)
    n, p = X.shape
    if n < min_rows:
        raise InsufficientDataError(f"need at least {min_rows} observations, got {n}")
    if p < min_cols:
        raise DimensionError(f"need at least {min_cols} variables, got {p}")
    return X


def center_columns(X):
    """Subtract column means.

    Returns
    -------
    Xc : ndarray (n, p)
    means : ndarray (p,)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"data matrix must be 2-D, got shape {X.shape}")
    _check_finite(X)
    means = X.mean(axis=0)
    Xc = X - means
    # second pass removes the rounding residue of the first
    Xc -= Xc.mean(axis=0)
    return Xc, means


def sample_covariance(Xc):
    """Unbiased covariance ``Xc.T @ Xc / (n - 1)`` of an already centred matrix."""
    Xc = np.asarray(Xc, dtype=np.float64)
    if Xc.ndim != 2:
        raise DimensionError(f"data matrix must be 2-D, got shape {Xc.shape}")
    n = Xc.shape[0]
    if n < 2:
        raise InsufficientDataError(f"covariance needs n >= 2 observations, got {n}")
    S = Xc.T @ Xc / (n - 1)
    return 0.5 * (S + S.T)


def correlation(S, i, j):
    """Correlation coefficient of variables `i` and `j`; 0 if either has zero variance."""
    sii = S[i, i]
    sjj = S[j, j]
    if sii <= 0 or sjj <= 0:
        return 0.0
    return float(S[i, j] / np.sqrt(sii * sjj))


def correlation_matrix(S):
    S = np.asarray(S, dtype=np.float64)
    d = np.diag(S)
    ok = d > 0
    scale = np.where(ok, np.sqrt(np.where(ok, d, 1.0)), 1.0)
    R = S / np.outer(scale, scale)
    R[~ok, :] = 0.0
    R[:, ~ok] = 0.0
    return R


def similarity_matrix(S, config=None):
    """Pairwise merge priorities; the diagonal holds ``-inf`` so nothing self-merges."""
    config = config or SimilarityConfig()
    S = np.asarray(S, dtype=np.float64)
    R = correlation_matrix(S)
    if config.kind == "corr":
        M = R
    elif config.kind == "abscorr":
        M = np.abs(R)
    else:
        M = np.abs(R) + config.lam * np.abs(S)
    np.fill_diagonal(M, -np.inf)
    return M


def jacobi_angle(s11, s22, s12):
    """Angle in [-pi/4, pi/4] whose rotation zeroes the off-diagonal of
    ``[[s11, s12], [s12, s22]]``."""
    vals = (float(s11), float(s22), float(s12))
    if not all(np.isfinite(v) for v in vals):
        raise NonFiniteInputError(f"non-finite 2x2 entries {vals}")
    return float(jacobi_angle_scalar(*vals))


def _check_pair(p, alpha, beta):
    if alpha == beta:
        raise TreeletError("rotation indices must differ")
    for idx in (alpha, beta):
        if not 0 <= idx < p:
            raise DimensionError(f"index {idx} out of range for dimension {p}")


def rotate_covariance(S, alpha, beta, theta):
    """Return ``J^T S J`` for the Jacobi rotation on (alpha, beta)."""
    S = np.array(S, dtype=np.float64, copy=True)
    _check_pair(S.shape[0], alpha, beta)
    c, s = np.cos(theta), np.sin(theta)
    ra, rb = S[alpha].copy(), S[beta].copy()
    S[alpha, :] = c * ra + s * rb
    S[beta, :] = -s * ra + c * rb
    ca, cb = S[:, alpha].copy(), S[:, beta].copy()
    S[:, alpha] = c * ca + s * cb
    S[:, beta] = -s * ca + c * cb
    return S


def rotate_coordinates(x, alpha, beta, theta):
    """Return ``J^T x``: only components `alpha` and `beta` change."""
    x = np.array(x, dtype=np.float64, copy=True)
    _check_pair(x.shape[-1], alpha, beta)
    c, s = np.cos(theta), np.sin(theta)
    xa, xb = x[..., alpha].copy(), x[..., beta].copy()
    x[..., alpha] = c * xa + s * xb
    x[..., beta] = -s * xa + c * xb
    return x
