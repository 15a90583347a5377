"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class FunctionalGmmError(Exception):
    """Base class for errors raised by this package."""


class DataValidationError(FunctionalGmmError, ValueError):
    """Input data failed validation (missing columns, bad cells, misaligned rows)."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EstimationError(FunctionalGmmError, RuntimeError):
    """A numerical step of the estimation failed.

    ``diagnostics`` carries whatever was known at the point of failure
    (optimizer trace, condition numbers) so callers can serialize it.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(EstimationError):
    """No multi-start run of the simplex optimizer converged."""


class SingularCovarianceError(EstimationError):
    """The HAC moment covariance is numerically singular."""


class IdentificationError(EstimationError):
    """The moment Jacobian is rank deficient, so some parameters are unidentified."""
