"""Exception hierarchy shared across the package."""

from __future__ import annotations


class StableRulesError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StableRulesError):
    """A precondition on user-supplied data or configuration was violated."""


class DimensionMismatchError(InvalidInputError):
    """Vector/matrix dimensions do not agree."""


class ConfigError(StableRulesError):
    """A scenario or CLI configuration file is missing, malformed, or inconsistent."""


class SingularDesignError(StableRulesError):
    """A regression design matrix is rank deficient.

    ``columns`` names the offending columns (those that are linear
    combinations of earlier ones, or constant after standardization).
    """

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(StableRulesError):
    """An iterative solver failed to converge.

    ``best`` carries the best iterate found (a FitReport, PrimitivesEstimate,
    or raw parameter vector depending on the caller), so partial results
    survive the failure.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class IdentificationError(StableRulesError):
    """A parameter is not identified by the data.

    ``detail`` lists the offending agents or parameters.
    """

    def __init__(self, message: str, detail=()):
        super().__init__(message)
        self.detail = detail


class UnreachableSupportError(StableRulesError):
    """No penalty level on the path yields the requested active-set size."""
