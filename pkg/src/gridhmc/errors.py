"""Exception hierarchy shared across the package."""


class GridHMCError(Exception):
    """Base class for all package errors."""


class ValidationError(GridHMCError, ValueError):
    """Bad input: wrong dimensions, invalid configuration, malformed files."""


class CacheError(ValidationError):
    """A cache file is corrupted or does not match the current model."""


class NumericalError(GridHMCError, ArithmeticError):
    """A numerical routine failed (non-finite values, indefinite matrices, no convergence)."""


class OutOfDomain(GridHMCError):
    """A point lies outside the box of a grid or interpolant."""
