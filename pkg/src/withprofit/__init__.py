"""Market valuation of bonus payments in multi-state with-profit life insurance."""

from __future__ import annotations

from .errors import (
    ConfigurationError,
    DegenerateDivisionError,
    DegenerateProductError,
    DivergenceError,
    GridError,
    MemoryBudgetError,
    NumericalError,
    NumericalInputError,
    SimulationError,
    StepSizeError,
    WithProfitError,
)
from .odes import StatewiseGrid, TimeGrid
from .states import StateModel

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateDivisionError",
    "DegenerateProductError",
    "DivergenceError",
    "GridError",
    "MemoryBudgetError",
    "NumericalError",
    "NumericalInputError",
    "SimulationError",
    "StateModel",
    "StatewiseGrid",
    "StepSizeError",
    "TimeGrid",
    "WithProfitError",
]
