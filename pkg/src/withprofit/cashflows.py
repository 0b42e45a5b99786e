"""Expected cash-flow densities on the market basis and their discounting.

Densities are stored on the grid as one-sided node values (``right`` just
after and ``left`` just before each node).  The trapezoid rule is applied to
the node average, which keeps jumps on grid points at second order.

The projection needs ``int_t^n P(t, s; r) a(t, s) ds`` for every grid time
``t`` and every short rate ``r`` visited by any scenario.  Because the
Vasicek discount factor depends on ``t`` and ``s`` only through ``s - t``,
these integrals are tabulated once per grid time on a set of Chebyshev nodes
in ``r`` and interpolated at run time (:class:`DiscountTable`).  State-wise
unit bonus flows ``a_i(t, s)`` are generated for all anchors by the exact
recursion ``a(t_m, s) = p(t_m, t_{m+1}) a(t_{m+1}, s)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import ConfigurationError, GridError, MemoryBudgetError
from .odes import EPS_T, StatewiseGrid, TimeGrid, check_finite
from .payments import PaymentSpec, state_rates
from .rates import TransitionRateSet


@dataclass(frozen=True)
class CashFlowDensity:
    """Payment rate ``s -> a(t, s)`` on the grid points ``t = s_0 < ... < s_L = n``."""

    grid: TimeGrid
    anchor: float
    right: np.ndarray
    left: np.ndarray

    def __post_init__(self):
        m = self.grid.index(self.anchor)
        if len(self.right) != self.grid.n_steps + 1 - m or len(self.left) != len(self.right):
            raise ConfigurationError("density length does not match its anchor")
        check_finite(self.right, "cash-flow density")
        check_finite(self.left, "cash-flow density")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[self.grid.index(self.anchor):]

    @property
    def rate(self) -> np.ndarray:
        """Node values used by the trapezoid rule."""
        out = 0.5 * (self.right + self.left)
        out[0] = self.right[0]
        out[-1] = self.left[-1]
        return out

    def integral(self) -> float:
        return trapezoid(self.rate, self.grid.step)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "rate"])
            for s, a in zip(self.times, self.rate):
                w.writerow([repr(float(s)), repr(float(a))])


def trapezoid(values, h: float, axis: int = -1):
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    if v.shape[-1] < 2:
        return np.zeros(v.shape[:-1])
    return h * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


def state_rate_function(payments: PaymentSpec, market_rates: TransitionRateSet,
                        surrender: Callable | None) -> Callable:
    """``t -> (..., S)`` expected payment rates per state on the market basis."""
    return lambda t: state_rates(payments, market_rates, t, surrender=surrender)


def _one_sided(fn: Callable, grid: TimeGrid):
    t = grid.times
    return (check_finite(fn(t + EPS_T), "payment rates"),
            check_finite(fn(t - EPS_T), "payment rates"))


def density_from_probabilities(probs: StatewiseGrid, rate_fn: Callable) -> CashFlowDensity:
    """``a(0, s) = sum_j p_j(s) c_j(s)`` with ``c = rate_fn``."""
    grid = probs.grid
    cr, cl = _one_sided(rate_fn, grid)
    p = probs.values
    return CashFlowDensity(grid, 0.0, (p * cr).sum(axis=1), (p * cl).sum(axis=1))


def predetermined_cashflow(p_rho: StatewiseGrid, payments: PaymentSpec,
                           market_rates: TransitionRateSet,
                           surrender: Callable | None) -> CashFlowDensity:
    """Expected predetermined cash flow ``A°(0, ds)``.

    ``p_rho`` holds the rho-modified probabilities on the full state space
    (plain probabilities in premium states).  Free-policy states pay the
    positive parts of their premium-state counterparts.
    """
    return density_from_probabilities(
        p_rho, state_rate_function(payments, market_rates, surrender))


def unit_bonus_cashflow(probs: StatewiseGrid, bonus: PaymentSpec, market_rates: TransitionRateSet,
                        unit_surrender: Callable | None) -> CashFlowDensity:
    """Expected unit bonus cash flow ``a†(0, s)``."""
    return density_from_probabilities(
        probs, state_rate_function(bonus, market_rates, unit_surrender))


# -- discounting ----------------------------------------------------------------


@dataclass(frozen=True)
class FlatCurve:
    rate: float

    def discount(self, tau):
        return np.exp(-self.rate * np.asarray(tau, dtype=float))


@dataclass(frozen=True)
class VasicekCurve:
    """Time-``t`` curve of a Vasicek model given ``r(t)``; ``tau = s - t``."""

    params: object
    r: float

    def discount(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.exp(self.params.A(tau) - self.params.B(tau) * self.r)

    def forward(self, tau):
        tau = np.asarray(tau, dtype=float)
        return -self.params.dA(tau) + self.params.dB(tau) * self.r


@dataclass(frozen=True)
class ForwardCurve:
    """Curve given only by forward rates ``f(tau)``; integrated numerically."""

    forward: Callable

    def discount_on(self, tau: np.ndarray) -> np.ndarray:
        f = np.asarray(self.forward(tau), dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(tau))])
        return np.exp(-cum)


def discount(density: CashFlowDensity, curve, weight: Callable | None = None) -> float:
    """``int_t^n exp(-int_t^s f) a(t, s) ds`` by the trapezoid rule.

    ``curve`` provides ``discount(tau)`` or ``discount_on(tau_grid)``.  An
    optional ``weight(tau)`` multiplies the integrand (used for durations).
    """
    tau = density.times - density.anchor
    if hasattr(curve, "discount"):
        df = curve.discount(tau)
    else:
        df = curve.discount_on(tau)
    w = 1.0 if weight is None else weight(tau)
    return float(trapezoid(density.rate * df * w, density.grid.step))


# -- tabulated discounting -----------------------------------------------------------


@dataclass(frozen=True)
class RateRange:
    """Chebyshev nodes on ``[lo, hi]`` for interpolation in the short rate."""

    lo: float
    hi: float
    n_nodes: int = 16

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigurationError("empty short-rate range")
        if self.n_nodes < 2:
            raise ConfigurationError("at least two Chebyshev nodes are required")

    @property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.n_nodes)
        x = np.cos(np.pi * (k + 0.5) / self.n_nodes)
        return 0.5 * (self.hi + self.lo) + 0.5 * (self.hi - self.lo) * x

    def to_unit(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < self.lo) or np.any(r > self.hi):
            raise GridError(
                f"short rate {float(np.min(r)):.4f}..{float(np.max(r)):.4f} outside the "
                f"tabulated range [{self.lo:.4f}, {self.hi:.4f}]"
            )
        return (2.0 * r - (self.hi + self.lo)) / (self.hi - self.lo)

    def basis(self, r) -> np.ndarray:
        """Chebyshev basis ``T_k(x(r))``, shape ``r.shape + (n_nodes,)``."""
        return cheb.chebvander(self.to_unit(r), self.n_nodes - 1)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Node values (last axis) to Chebyshev coefficients."""
        x = (2.0 * self.nodes - (self.hi + self.lo)) / (self.hi - self.lo)
        V = cheb.chebvander(x, self.n_nodes - 1)
        flat = np.asarray(values, dtype=float).reshape(-1, self.n_nodes)
        return np.linalg.solve(V, flat.T).T.reshape(np.shape(values))


def _kernels(params, grid: TimeGrid, rr: RateRange) -> np.ndarray:
    """(M+1, 2C): ``P(tau; r_c)`` and ``psi(tau) P(tau; r_c)`` for ``tau = i h``."""
    tau = grid.times[:, None]
    P = np.exp(params.A(tau) - params.B(tau) * rr.nodes[None, :])
    return np.concatenate([P, params.B(tau) * P], axis=1)


@dataclass(frozen=True)
class DiscountTable:
    """Chebyshev coefficients of ``(value, duration)`` integrals per grid time.

    ``coef`` has shape (M+1, ..., 2, C).  ``value`` is
    ``int_t^n P(t, s; r) a(t, s) ds`` and ``duration`` the same integral
    weighted by ``psi(t, s)``.
    """

    grid: TimeGrid
    rates: RateRange
    coef: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coef.setflags(write=False)

    def evaluate(self, m: int, basis: np.ndarray) -> np.ndarray:
        """Values at step ``m`` for rates with Chebyshev ``basis`` (B, C).

        Returns shape (B, ..., 2).
        """
        return np.einsum("bc,...qc->b...q", basis, self.coef[m])

    def at(self, t: float, r) -> np.ndarray:
        m = self.grid.index(t)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return self.evaluate(m, self.rates.basis(r))


def anchored_discount_table(density: CashFlowDensity, params, rr: RateRange) -> DiscountTable:
    """Table of ``int_t^n P(t, s; r) a(0, s) ds`` for the time-0 density ``a(0, .)``.

    At anchor ``t_m`` the first node uses the right limit of the density.
    """
    grid = density.grid
    if density.anchor != 0.0:
        raise ConfigurationError("anchored tables need a time-0 density")
    M, h = grid.n_steps, grid.step
    K = _kernels(params, grid, rr)
    d = density.rate
    out = np.zeros((M + 1, K.shape[1]))
    for m in range(M):
        v = d[m:].copy()
        v[0] = density.right[m]
        v[0] *= 0.5
        v[-1] *= 0.5
        out[m] = h * (v @ K[: M - m + 1])
    C = rr.n_nodes
    vals = out.reshape(M + 1, 2, C)
    return DiscountTable(grid, rr, rr.coefficients(vals))


def statewise_discount_table(steps: np.ndarray, rate_fn: Callable, grid: TimeGrid, params,
                             rr: RateRange) -> DiscountTable:
    """Table of ``int_t^n P(t, s; r) a_i(t, s) ds`` for every state ``i``.

    ``steps[m]`` is ``p(t_m, t_{m+1})`` and ``rate_fn`` the per-state payment
    rates, so that ``a_i(t, s) = sum_j p_ij(t, s) c_j(s)``.
    """
    M, h = grid.n_steps, grid.step
    cr, cl = _one_sided(rate_fn, grid)
    cbar = 0.5 * (cr + cl)
    cbar[-1] = cl[-1]
    S = cr.shape[1]
    K = _kernels(params, grid, rr)
    Y = np.zeros((S, M + 1))
    Y[:, M] = cbar[M]
    out = np.zeros((M + 1, S, K.shape[1]))
    for m in range(M - 1, -1, -1):
        Y[:, m + 1:] = steps[m] @ Y[:, m + 1:]
        Y[:, m] = cbar[m]
        L = M - m + 1
        acc = Y[:, m:] @ K[:L]
        acc -= 0.5 * np.outer(Y[:, m], K[0]) + 0.5 * np.outer(Y[:, M], K[L - 1])
        acc += 0.5 * np.outer(cr[m] - cbar[m], K[0])
        out[m] = h * acc
    C = rr.n_nodes
    return DiscountTable(grid, rr, rr.coefficients(out.reshape(M + 1, S, 2, C)))


# -- state-wise unit bonus cash flows on an anchor grid ----------------------------


@dataclass(frozen=True)
class UnitBonusCFGrid:
    """``a†_i(t, s)`` for anchors ``t`` on a coarse grid and all states ``i``.

    ``values[a, i, l]`` is the density at ``s = grid.times[l]`` for anchor
    ``anchors[a]`` (zero for ``s`` before the anchor).  Between anchors the
    densities are interpolated linearly in ``t``.
    """

    grid: TimeGrid
    anchors: np.ndarray
    values: np.ndarray = field(repr=False)

    def density(self, anchor: float, state: int) -> CashFlowDensity:
        a = int(np.argmin(np.abs(self.anchors - anchor)))
        if abs(self.anchors[a] - anchor) > 1e-9:
            raise GridError(f"{anchor} is not an anchor of the grid")
        m = self.grid.index(anchor)
        v = self.values[a, state, m:]
        return CashFlowDensity(self.grid, float(self.anchors[a]), v.copy(), v.copy())

    def at(self, t: float) -> np.ndarray:
        """(S, M+1) densities at time ``t`` interpolated between anchors."""
        if t < self.anchors[0] - 1e-12 or t > self.anchors[-1] + 1e-12:
            raise GridError(f"t={t} outside the anchor grid")
        a = int(np.clip(np.searchsorted(self.anchors, t, side="right") - 1, 0,
                        len(self.anchors) - 2))
        w = (t - self.anchors[a]) / (self.anchors[a + 1] - self.anchors[a])
        out = (1 - w) * self.values[a] + w * self.values[a + 1]
        out[:, self.grid.times < t - 1e-12] = 0.0
        return out


def unit_bonus_cashflow_grid(steps: np.ndarray, rate_fn: Callable, grid: TimeGrid,
                             anchor_step: float = 0.1,
                             memory_budget: float = 2e9) -> UnitBonusCFGrid:
    """State-wise unit bonus cash flows from every anchor of a coarse grid.

    The first node of each anchored density is the right limit of the
    payment rate (``p_ii(t, t) = 1``); other nodes use node averages.
    Raises :class:`MemoryBudgetError` if the table would exceed
    ``memory_budget`` bytes.
    """
    M = grid.n_steps
    ratio = anchor_step / grid.step
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 or M % stride:
        raise ConfigurationError("the anchor step must be a multiple of the grid step dividing n")
    cr, cl = _one_sided(rate_fn, grid)
    cbar = 0.5 * (cr + cl)
    cbar[-1] = cl[-1]
    S = cr.shape[1]
    n_anchor = M // stride + 1
    need = 8.0 * n_anchor * S * (M + 1)
    if need > memory_budget:
        raise MemoryBudgetError(
            f"anchor grid needs {need / 1e9:.2f} GB (budget {memory_budget / 1e9:.2f} GB); "
            "use a coarser anchor step"
        )
    values = np.zeros((n_anchor, S, M + 1))
    Y = np.zeros((S, M + 1))
    Y[:, M] = cbar[M]
    values[-1, :, M] = cbar[M]
    for m in range(M - 1, -1, -1):
        Y[:, m + 1:] = steps[m] @ Y[:, m + 1:]
        Y[:, m] = cbar[m]
        if m % stride == 0:
            a = m // stride
            values[a, :, m:] = Y[:, m:]
            values[a, :, m] = cr[m]
    for a in range(n_anchor):
        check_finite(values[a], "unit bonus cash flows")
    return UnitBonusCFGrid(grid, grid.times[::stride].copy(), values)


def export_density(density: CashFlowDensity, directory, name: str) -> Path:
    path = Path(directory) / f"{name}.csv"
    density.to_csv(path)
    return path
