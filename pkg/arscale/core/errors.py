"""Exception hierarchy shared by the library and the CLI."""


class ArscaleError(Exception):
    """Root of every error raised on purpose by arscale."""


class ModelValidationError(ArscaleError, ValueError):
    """An ARModel violates its invariants.

    ``kind`` is one of ``dimension-mismatch``, ``non-finite-entry`` or
    ``negative-sigma``.
    """

    DIMENSION_MISMATCH = "dimension-mismatch"
    NON_FINITE_ENTRY = "non-finite-entry"
    NEGATIVE_SIGMA = "negative-sigma"

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class DimensionMismatchError(ArscaleError, ValueError):
    pass


class DenseCapExceededError(ArscaleError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"dense materialization of size {size} exceeds cap {cap} (raise ARSCALE_DENSE_CAP)")
        self.size = size
        self.cap = cap


class InsufficientDataError(ArscaleError, ValueError):
    pass


class UsageError(ArscaleError):
    pass
