"""Exception types raised across the package."""


class WigturbError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(WigturbError, ValueError):
    pass


class InvalidIntervalError(InvalidArgumentError):
    """Raised when a propagation interval runs backwards (z < z0)."""


class DimensionError(WigturbError, ValueError):
    """Raised when kernels or states live on incompatible grids."""


class ConvergenceError(WigturbError, RuntimeError):
    """Quadrature did not reach the requested tolerance.

    The attribute ``estimate`` carries the quadrature's own error estimate.
    """

    def __init__(self, message, estimate=float("nan")):
        super().__init__(message)
        self.estimate = estimate


class IntegrityError(WigturbError, RuntimeError):
    """A numerical invariant (Hermiticity, unitarity, ...) was violated."""


class SingularTransformError(WigturbError, ArithmeticError):
    pass


class SingularityError(InvalidArgumentError):
    """Spectrum evaluated at a point where it diverges."""
