"""Exception hierarchy.

Every error raised by this package derives from :class:`MovehabError` so
callers can catch one type at the boundary. File-system failures are left
to the builtin ``OSError``.
"""


class MovehabError(Exception):
    """Base class for all package errors."""


class ParseError(MovehabError):
    """Malformed input file; message carries the offending line number."""


class DomainError(MovehabError):
    """Argument outside a function's mathematical domain."""


class NonFiniteAtInit(MovehabError):
    """Objective is non-finite at the optimizer's starting point."""


class DegenerateInput(MovehabError):
    """Geometry input has no area (fewer than 3 distinct points, or collinear)."""


class OutOfExtent(MovehabError):
    """Point lies outside the shared raster extent."""


class ExtentMismatch(MovehabError):
    """Rasters in one operation disagree on extent or cell size."""


class DuplicateTimestamp(MovehabError):
    """Track has two locations with the same timestamp."""


class NonFiniteCoordinate(MovehabError):
    """Track coordinate is NaN or infinite."""


class MissingCovariate(MovehabError):
    """A required covariate value or column is absent."""


class UnknownCovariate(MovehabError):
    """A named term does not exist in the table or model."""


class TooFewSteps(MovehabError):
    """Not enough usable steps to fit the requested model."""


class SeparationDetected(MovehabError):
    """Logistic-type fit diverged; a coefficient ran away to +/- infinity."""


class SingularDesign(MovehabError):
    """Design matrix is rank deficient."""


class ExtentExhausted(MovehabError):
    """Rejection sampling could not place the required points in the extent."""


class InvalidUpdatedKernel(MovehabError):
    """Selection-adjusted movement kernel has a non-positive parameter."""


class MissingMovementContext(MovehabError):
    """Prediction needs step-length context that was not supplied."""


class InvalidObservation(MovehabError):
    """Observation outside the likelihood's support (e.g. step length <= 0)."""


class NonStochasticInput(MovehabError):
    """Matrix is not a row-stochastic transition matrix."""


class AllRestartsFailed(MovehabError):
    """Every optimizer restart failed or returned a non-finite likelihood."""


class UsageError(MovehabError):
    """Bad command line or config; maps to exit status 2."""
