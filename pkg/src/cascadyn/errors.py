"""Exception types shared across the package."""


class CascadynError(Exception):
    """Base class for all package-specific errors."""


class DataError(CascadynError, ValueError):
    """Malformed or inconsistent input data (files, cascades, matrices)."""


class NumericsError(CascadynError, RuntimeError):
    """Numerical failure during fitting; carries the offending user id."""

    def __init__(self, message: str, user: str | None = None):
        super().__init__(message)
        self.user = user
