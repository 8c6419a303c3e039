"""Exception types shared across the package."""


class FacefieldError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FacefieldError, ValueError):
    """Raised when an operation receives data violating its preconditions."""


class ConfigError(FacefieldError, ValueError):
    """Raised on dimension or configuration mismatches."""


class CheckpointError(FacefieldError, RuntimeError):
    """Raised when a checkpoint is missing, truncated, or from an unknown schema."""


class AlignmentError(FacefieldError, RuntimeError):
    """Raised when landmark alignment fails; carries the best candidate found.

    Attributes:
        best: the lowest-residual alignment candidate, or None.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(FacefieldError, RuntimeError):
    """Raised when an optimization loop diverges; carries the iteration trace.

    Attributes:
        trace: list of (iteration, error) pairs recorded before the abort.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
