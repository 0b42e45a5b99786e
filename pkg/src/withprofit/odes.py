"""Fixed-step time grids and classical RK4 machinery for linear ODE systems.

All deterministic systems in the package are linear (possibly affine), so a
single RK4 step over ``[t_m, t_{m+1}]`` is a matrix.  Step matrices are built
in batch from coefficient matrices evaluated at the three RK4 stage times and
then chained.  Coefficients are evaluated one-sidedly at the interval ends
(``t_m + EPS`` and ``t_{m+1} - EPS``) so that payment and rate functions with
jumps on grid points keep the scheme fourth order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DegenerateDivisionError, GridError, NumericalInputError

EPS_T = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_M = horizon`` with step ``step``."""

    horizon: float
    step: float
    n_steps: int = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if not (np.isfinite(self.step) and self.step > 0):
            raise ConfigurationError(f"step must be positive, got {self.step}")
        ratio = self.horizon / self.step
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(
                f"step {self.step} does not divide the horizon {self.horizon}"
            )
        object.__setattr__(self, "n_steps", n)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def stage_times(self) -> np.ndarray:
        """(M, 3) array of RK4 stage times: start+, midpoint, end-."""
        t = self.times
        return np.stack([t[:-1] + EPS_T, 0.5 * (t[:-1] + t[1:]), t[1:] - EPS_T], axis=1)

    def index(self, t: float) -> int:
        """Index of grid point ``t``; raises if ``t`` is not on the grid."""
        x = t / self.step
        m = int(round(x))
        if m < 0 or m > self.n_steps or abs(x - m) > 1e-7:
            raise GridError(f"time {t} is not a point of the grid with step {self.step}")
        return m

    def covers(self, other: "TimeGrid") -> bool:
        return abs(self.horizon - other.horizon) < 1e-12 and abs(self.step - other.step) < 1e-15


def one_sided(f: Callable[[np.ndarray], np.ndarray], t, side: str) -> np.ndarray:
    """Evaluate ``f`` just right (``side='+'``) or left (``'-'``) of ``t``."""
    t = np.asarray(t, dtype=float)
    return f(t + EPS_T if side == "+" else t - EPS_T)


def node_values(f: Callable[[np.ndarray], np.ndarray], grid: TimeGrid) -> np.ndarray:
    """Values of ``f`` on grid nodes, averaging the one-sided limits.

    With jumps averaged at nodes, the composite trapezoid rule integrates a
    piecewise smooth function with jumps on grid points at second order.
    The end nodes use the inward limits.
    """
    t = grid.times
    right = np.asarray(f(t + EPS_T))
    left = np.asarray(f(t - EPS_T))
    out = 0.5 * (left + right)
    out[0] = right[0]
    out[-1] = left[-1]
    return out


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalInputError(f"non-finite values in {what}")
    return arr


def rk4_step_matrices(a1: np.ndarray, a2: np.ndarray, a4: np.ndarray, h: float) -> np.ndarray:
    """Batch of RK4 step matrices for the column system ``y' = A(t) y``.

    ``a1``, ``a2``, ``a4`` have shape (M, d, d) and hold ``A`` at the first,
    middle and last stage time of each step.  Returns ``R`` with
    ``y_{m+1} = R[m] @ y_m``.
    """
    k1 = a1
    k2 = a2 + 0.5 * h * (a2 @ k1)
    k3 = a2 + 0.5 * h * (a2 @ k2)
    k4 = a4 + h * (a4 @ k3)
    eye = np.eye(a1.shape[-1])
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_row_step_matrices(a1, a2, a4, h: float) -> np.ndarray:
    """Step matrices for the row system ``y' = y A(t)``: ``y_{m+1} = y_m @ R[m]``."""
    t = lambda a: np.swapaxes(a, -1, -2)  # noqa: E731
    return t(rk4_step_matrices(t(a1), t(a2), t(a4), h))


def chain_row(y0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Apply row step matrices in sequence; returns all M+1 states."""
    out = np.empty((steps.shape[0] + 1,) + np.shape(y0))
    out[0] = y0
    y = np.asarray(y0, dtype=float)
    for m in range(steps.shape[0]):
        y = y @ steps[m]
        out[m + 1] = y
    return out


def hermite(t, grid: TimeGrid, values, slope_right, slope_left) -> np.ndarray:
    """Cubic Hermite interpolation of grid data with one-sided slopes.

    On ``[t_m, t_{m+1}]`` the slopes used are ``slope_right[m]`` (derivative
    at ``t_m+``) and ``slope_left[m+1]`` (derivative at ``t_{m+1}-``).  The
    error is O(h^4), matching the RK4 data being interpolated.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = grid.step
    m = np.clip(np.floor(t / h).astype(int), 0, grid.n_steps - 1)
    s = (t - m * h) / h
    s = s.reshape(s.shape + (1,) * (values.ndim - 1))
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return (
        h00 * values[m]
        + h10 * h * slope_right[m]
        + h01 * values[m + 1]
        + h11 * h * slope_left[m + 1]
    )


def hermite_derivative(t, grid: TimeGrid, values, slope_right, slope_left) -> np.ndarray:
    """Time derivative of :func:`hermite`."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = grid.step
    m = np.clip(np.floor(t / h).astype(int), 0, grid.n_steps - 1)
    s = (t - m * h) / h
    s = s.reshape(s.shape + (1,) * (values.ndim - 1))
    d00 = 6 * s * (s - 1)
    d10 = (1 - s) * (1 - 3 * s)
    d01 = -d00
    d11 = s * (3 * s - 2)
    return (
        d00 * values[m] / h
        + d10 * slope_right[m]
        + d01 * values[m + 1] / h
        + d11 * slope_left[m + 1]
    )


def ratio_with_limit(num, den, dnum, dden, eps: float = 1e-12, what: str = "ratio"):
    """``num / den`` with a l'Hopital fallback where both vanish.

    Where ``|den| <= eps`` and ``|num| <= eps`` the derivative ratio
    ``dnum / dden`` is used, or 0 if the derivatives vanish as well.  A
    vanishing denominator with a non-vanishing numerator raises
    :class:`DegenerateDivisionError`.
    """
    num, den, dnum, dden = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                 for a in (num, den, dnum, dden)))
    out = np.zeros(num.shape)
    ok = np.abs(den) > eps
    out[ok] = num[ok] / den[ok]
    small = ~ok
    if np.any(small & (np.abs(num) > eps)):
        bad = np.argwhere(small & (np.abs(num) > eps))[0]
        raise DegenerateDivisionError(
            f"{what}: denominator vanishes with nonzero numerator at index {tuple(bad)}"
        )
    lim = small & (np.abs(dden) > eps)
    out[lim] = dnum[lim] / dden[lim]
    return out


@dataclass(frozen=True)
class StatewiseGrid:
    """Per-state values on a uniform grid, with one-sided slopes.

    ``values[m, j]`` is the value in state ``j`` at ``grid.times[m]``.
    ``slope_right[m]`` / ``slope_left[m]`` are the derivatives just after and
    just before ``t_m``; they make :meth:`at` a fourth-order interpolant.
    """

    grid: TimeGrid
    values: np.ndarray
    slope_right: np.ndarray
    slope_left: np.ndarray

    def __post_init__(self):
        expected = self.grid.n_steps + 1
        for name in ("values", "slope_right", "slope_left"):
            arr = getattr(self, name)
            if arr.shape[0] != expected:
                raise ConfigurationError(
                    f"{name} has {arr.shape[0]} rows, grid has {expected} points"
                )
        for arr in (self.values, self.slope_right, self.slope_left):
            arr.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def state(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def at(self, t) -> np.ndarray:
        """Interpolated values at arbitrary times in ``[0, horizon]``."""
        return hermite(t, self.grid, self.values, self.slope_right, self.slope_left)

    def derivative_at(self, t) -> np.ndarray:
        return hermite_derivative(t, self.grid, self.values, self.slope_right, self.slope_left)

    def at_stages(self) -> np.ndarray:
        """(M, 3, S) values at the RK4 stage times of every step."""
        mid = self.at(self.grid.stage_times()[:, 1])
        return np.stack([self.values[:-1], mid, self.values[1:]], axis=1)

    def slopes_at_stages(self) -> np.ndarray:
        """(M, 3, S) one-sided derivatives matching :meth:`at_stages`."""
        mid = self.derivative_at(self.grid.stage_times()[:, 1])
        return np.stack([self.slope_right[:-1], mid, self.slope_left[1:]], axis=1)
