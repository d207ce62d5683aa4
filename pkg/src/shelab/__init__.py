"""Simulation and verification toolkit for spatial averages of the 1-D stochastic heat equation."""

from .errors import (
    ConfigurationError,
    DataError,
    DomainError,
    InfeasiblePartitionError,
    NumericalBlowupError,
    QuadratureError,
    SheLabError,
    UsageError,
)

__version__ = "0.1.0"
