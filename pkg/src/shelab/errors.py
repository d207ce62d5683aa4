"""Exception hierarchy shared by every module."""


class SheLabError(Exception):
    """Base class for all errors raised by shelab."""


class ConfigurationError(SheLabError, ValueError):
    """A configuration violates a documented invariant (raised before compute)."""


class DomainError(SheLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalBlowupError(SheLabError, FloatingPointError):
    """A solver produced a non-finite value.

    Attributes
    ----------
    step, cell : int
        Time index and space index of the first offending lattice value.
    """

    def __init__(self, step, cell, message=None):
        self.step = int(step)
        self.cell = int(cell)
        super().__init__(message or f"non-finite value at time index {step}, cell {cell}")


class QuadratureError(SheLabError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        self.achieved = achieved
        super().__init__(f"{message} (achieved absolute error estimate {achieved:.3e})")


class DataError(SheLabError, ValueError):
    """Input data cannot support the requested statistic."""


class UsageError(SheLabError, ValueError):
    """Inputs are individually valid but used together incorrectly."""


class InfeasiblePartitionError(SheLabError, ValueError):
    """A partition cannot satisfy its block-length constraints."""
