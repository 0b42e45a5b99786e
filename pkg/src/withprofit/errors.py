"""Exception hierarchy.

The CLI maps :class:`ConfigurationError` to exit status 1 and
:class:`NumericalError` to exit status 2.
"""


class WithProfitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WithProfitError, ValueError):
    """Invalid model, grid or run configuration."""


class NumericalInputError(WithProfitError, ValueError):
    """A rate or payment function produced a non-finite value."""


class NumericalError(WithProfitError, ArithmeticError):
    """A numerical procedure failed or diverged."""


class StepSizeError(NumericalError):
    """Probabilities undershot zero by more than the solver tolerance."""


class DegenerateProductError(NumericalError):
    """The benefit reserve vanishes where the free policy factor needs it."""


class DegenerateDivisionError(NumericalError):
    """A unit price is (near) zero while dividends are being allocated to it."""


class DivergenceError(NumericalError):
    """A scenario projection produced non-finite values."""


class GridError(NumericalError):
    """A requested time is not available on a precomputed grid."""


class SimulationError(NumericalError):
    """A simulated scenario path contains non-finite values."""


class MemoryBudgetError(WithProfitError, MemoryError):
    """A precomputation would exceed its configured memory budget."""
