"""Exception types raised across the package."""


class TedmdError(Exception):
    """Base class for all package errors."""


class BoundsError(TedmdError, ValueError):
    """Invalid sampling bounds."""


class DataError(TedmdError, ValueError):
    """Malformed, inconsistent or degenerate data."""


class TruncationError(TedmdError, ValueError):
    """Requested truncation rank is not supported by the data."""


class ConditioningError(TedmdError, ValueError):
    """Least-squares problem is too ill-conditioned to solve."""


class SolverError(TedmdError, RuntimeError):
    """Semidefinite program failed or returned an invalid solution.

    Attributes
    ----------
    residuals : dict
        Constraint residuals at the returned point, if any.
    """

    def __init__(self, message: str, residuals: dict = None) -> None:
        super().__init__(message)
        self.residuals = residuals or {}


class ConfigError(TedmdError, ValueError):
    """Invalid experiment configuration."""


class UnimplementedMethodError(TedmdError, NotImplementedError):
    """A reserved but unimplemented identification method was requested."""
