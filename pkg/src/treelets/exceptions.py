"""Exception hierarchy. Every error derives from `TreeletError` (a ValueError)."""


class TreeletError(ValueError):
    """Base class for errors raised by this package."""

    code = "treelet-error"


class NonFiniteInputError(TreeletError):
    code = "non-finite-input"


class InsufficientDataError(TreeletError):
    code = "insufficient-data"


class DimensionError(TreeletError):
    code = "dimension-mismatch"


class DegenerateInputError(TreeletError):
    code = "degenerate-input"


class ModelInvalidError(TreeletError):
    code = "model-invalid"


class EmptyConfidenceSetError(TreeletError):
    code = "empty-confidence-set"


class RankDeficientError(TreeletError):
    code = "rank-deficient"
