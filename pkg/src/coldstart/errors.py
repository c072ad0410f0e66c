"""Exception types raised by the library."""


class ColdStartError(Exception):
    """Base class for library errors."""


class IntegrationDivergedError(ColdStartError, ArithmeticError):
    """An ODE integration step produced a non-finite state."""


class DegenerateMatrixError(ColdStartError, ValueError):
    """A random connectivity matrix has (numerically) zero spectral radius."""


class InsufficientDataError(ColdStartError, ValueError):
    """Not enough samples for the requested washout / window."""


class BoundInapplicableError(ColdStartError, ValueError):
    """A contraction-based bound was requested outside its domain."""


class ZeroEpsilonError(ColdStartError, ValueError):
    """All points coincide, so a median kernel scale would be zero."""


class ThresholdTooStrictError(ColdStartError, ValueError):
    """Geometric-harmonics truncation kept too few eigenpairs."""


class MlpDivergenceError(ColdStartError, ArithmeticError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int):
        super().__init__(f"MLP training diverged at epoch {epoch}")
        self.epoch = epoch
