"""Exception hierarchy shared by all modules."""


class LongrunError(Exception):
    """Base class for library errors."""


class DomainError(LongrunError, ValueError):
    """An argument lies outside the domain of the operation."""


class DataError(LongrunError, ValueError):
    """Input data is invalid (non-positive values, bad ordering, too short)."""


class ParseError(DataError):
    """A data file could not be parsed.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CalibrationError(LongrunError):
    """Model calibration failed."""


class UnsupportedMethodError(LongrunError):
    """The requested evaluation method is not available for this model/exponent."""


class DivergenceError(LongrunError):
    """The requested moment is infinite for the model."""


class ConvergenceError(LongrunError):
    """An iterative or series evaluation did not converge."""


class SolverError(LongrunError):
    """Root bracketing or solving failed."""


class InsufficientSampleError(LongrunError):
    """Too few Monte Carlo paths for a diagnostic."""


class NumericalDerivativeError(LongrunError):
    """A finite-difference derivative produced a non-finite value."""


class GridError(LongrunError):
    """A grid is malformed or a surface could not be evaluated on it."""


class StrategyError(LongrunError):
    """A strategy specification is invalid or produced an invalid weight."""


class RangeError(LongrunError, ValueError):
    """A requested date range lies outside the available data."""
