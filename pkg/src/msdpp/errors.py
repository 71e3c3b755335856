"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented contract (shape, range, coverage)."""


class NumericalError(ArithmeticError):
    """Raised when a numerical routine fails to produce a usable result."""


class DomainError(NumericalError):
    """Raised when a matrix is outside the domain of an operation (e.g. not SPD)."""
