"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input object violates a structural invariant."""


class NumericalError(RuntimeError):
    """Raised when an iterative computation fails numerically."""
