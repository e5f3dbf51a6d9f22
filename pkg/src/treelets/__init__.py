"""Treelets: adaptive multi-scale bases from greedy pairwise Jacobi rotations."""

__version__ = "0.1.0"

from .exceptions import TreeletError
from .matrix import SimilarityConfig
from .engine import EngineConfig, TreeletModel, fit, fit_covariance, transform, forward, inverse, basis

__all__ = [
    "__version__",
    "TreeletError",
    "SimilarityConfig",
    "EngineConfig",
    "TreeletModel",
    "fit",
    "fit_covariance",
    "transform",
    "forward",
    "inverse",
    "basis",
]
