"""Technical reserves: Thiele equations, free-policy factor and premium calibration."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, DegenerateProductError, NumericalError
from .odes import (
    EPS_T,
    StatewiseGrid,
    TimeGrid,
    check_finite,
    hermite,
    hermite_derivative,
    ratio_with_limit,
    rk4_step_matrices,
)
from .payments import PaymentSpec, technical_rates
from .rates import TechnicalBasis
from .states import StateModel

log = logging.getLogger(__name__)


def _check_grid(model: StateModel, grid: TimeGrid) -> None:
    if abs(grid.horizon - model.horizon) > 1e-12:
        raise ConfigurationError(
            f"grid horizon {grid.horizon} does not match the contract horizon {model.horizon}"
        )


def _thiele_matrix(basis: TechnicalBasis, t) -> np.ndarray:
    """``r*(t) I - Lambda*(t)`` on the biometric sub-topology."""
    J = basis.rates.model.J
    mu = basis.rates.matrix(t)[..., :J, :J]
    gen = mu - np.eye(J) * mu.sum(axis=-1)[..., None]
    r = check_finite(np.asarray(basis.interest(t), dtype=float), "technical interest")
    return r[..., None, None] * np.eye(J) - gen


def thiele_system(basis: TechnicalBasis, payment_fn: Callable, grid: TimeGrid):
    """Solve ``V' = (r I - Lambda) V - c`` backward from ``V(n) = 0``.

    ``payment_fn(t)`` returns payment rates of shape ``t.shape + (J, P)`` for
    ``P`` payment streams that are solved together.  Returns values and the
    right/left one-sided derivatives, each of shape (M+1, J, P).
    """
    J = basis.rates.model.J
    st = grid.stage_times()
    A = _thiele_matrix(basis, st)
    C = check_finite(np.asarray(payment_fn(st), dtype=float), "payment rates")
    P = C.shape[-1]
    d = J + P
    aug = np.zeros(st.shape + (d, d))
    aug[..., :J, :J] = -A
    aug[..., :J, J:] = C
    # reversed time: each step starts at t_{m+1}- and ends at t_m+
    R = rk4_step_matrices(aug[:, 2], aug[:, 1], aug[:, 0], grid.step)
    Y = np.zeros((grid.n_steps + 1, d, P))
    Y[-1, J:, :] = np.eye(P)
    for m in range(grid.n_steps - 1, -1, -1):
        Y[m] = R[m] @ Y[m + 1]
    V = check_finite(Y[:, :J, :].copy(), "Thiele solution")
    t = grid.times
    slopes = []
    for side in (+1, -1):
        ts = t + side * EPS_T
        slopes.append(_thiele_matrix(basis, ts) @ V - np.asarray(payment_fn(ts)))
    return V, slopes[0], slopes[1]


def solve_thiele_many(basis: TechnicalBasis, streams: Sequence[PaymentSpec],
                      grid: TimeGrid) -> list[StatewiseGrid]:
    """State-wise technical reserves of several payment streams at once."""
    if not streams:
        return []
    _check_grid(basis.rates.model, grid)

    def payment_fn(t):
        return np.stack([technical_rates(p, basis.rates, t) for p in streams], axis=-1)

    V, sr, sl = thiele_system(basis, payment_fn, grid)
    return [StatewiseGrid(grid, V[..., i].copy(), sr[..., i].copy(), sl[..., i].copy())
            for i in range(len(streams))]


def solve_thiele(basis: TechnicalBasis, payments: PaymentSpec, grid: TimeGrid,
                 benefits_only: bool = False) -> StatewiseGrid:
    """State-wise technical reserve on the biometric states ``0..J-1``.

    Only transitions among biometric states enter; surrender and free-policy
    conversion carry no technical intensity by construction.
    """
    spec = payments.benefits() if benefits_only else payments
    return solve_thiele_many(basis, [spec], grid)[0]


class FreePolicyFactor:
    """``rho(t) = V*_0(t) / V*+_0(t)`` for ``t > 0`` and ``rho(0) = 1``.

    Evaluated between grid points from the Hermite interpolants of both
    reserves; where both vanish (typically at ``t = n``) the ratio of their
    derivatives is used.
    """

    def __init__(self, reserve: StatewiseGrid, benefit_reserve: StatewiseGrid, state: int = 0):
        self.grid = reserve.grid
        self._num = reserve
        self._den = benefit_reserve
        self._j = state
        den = benefit_reserve.values[1:-1, state]
        if np.any(den <= 0):
            m = int(np.argmax(den <= 0)) + 1
            raise DegenerateProductError(
                f"benefit reserve of state {state} is not positive at t={self.grid.times[m]:g}; "
                "the free policy factor is undefined"
            )
        self.values = self._eval(self.grid.times, side=None)
        self.values.setflags(write=False)

    def _eval(self, t, side):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        g, j = self.grid, self._j
        if side is None:
            num, den = self._num.values[:, j], self._den.values[:, j]
            dn = self._num.slope_left[:, j]
            dd = self._den.slope_left[:, j]
        else:
            tt = np.clip(t, 0.0, g.horizon)
            num = hermite(tt, g, self._num.values[:, j], self._num.slope_right[:, j],
                          self._num.slope_left[:, j])
            den = hermite(tt, g, self._den.values[:, j], self._den.slope_right[:, j],
                          self._den.slope_left[:, j])
            dn = hermite_derivative(tt, g, self._num.values[:, j], self._num.slope_right[:, j],
                                    self._num.slope_left[:, j])
            dd = hermite_derivative(tt, g, self._den.values[:, j], self._den.slope_right[:, j],
                                    self._den.slope_left[:, j])
        out = ratio_with_limit(num, den, dn, dd, what="free policy factor")
        return np.where(t == 0.0, 1.0, out)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self._eval(t, side="interp").reshape(t.shape)


def free_policy_factor(reserve: StatewiseGrid, benefit_reserve: StatewiseGrid) -> FreePolicyFactor:
    return FreePolicyFactor(reserve, benefit_reserve)


def extend_unit_reserves(model: StateModel, core: StatewiseGrid, rho: FreePolicyFactor | None = None,
                         tau: float | None = None) -> StatewiseGrid:
    """Extend biometric-state reserves to the full state space.

    Surrender states get 0 and free states the reserve of their premium-state
    counterpart, scaled by ``rho(tau)`` when a conversion time is supplied.
    """
    if core.n_states != model.J:
        raise ConfigurationError(f"expected reserves on {model.J} biometric states")
    scale = 1.0 if tau is None else float(np.asarray((rho or (lambda _: 1.0))(tau)))
    out = []
    for arr in (core.values, core.slope_right, core.slope_left):
        full = np.zeros((arr.shape[0], model.n_states))
        full[:, : model.J] = arr
        full[:, model.J + 1: 2 * model.J + 1] = scale * arr
        out.append(full)
    return StatewiseGrid(core.grid, *out)


def calibrate_premium(basis: TechnicalBasis, payments: PaymentSpec, grid: TimeGrid,
                      state: int = 0, tol: float = 1e-8) -> float:
    """Premium rate such that ``V*_state(0) = 0`` (equivalence principle)."""
    if payments.premium is None:
        raise ConfigurationError("no premium to calibrate")

    def f(rate):
        return solve_thiele(basis, payments.with_premium_rate(rate), grid).values[0, state]

    lo, f_lo = 0.0, f(0.0)
    if f_lo <= 0:
        raise ConfigurationError("benefits have no positive technical value; no premium applies")
    hi = max(1.0, abs(payments.premium.rate))
    for _ in range(200):
        if f(hi) < 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("could not bracket the equivalence premium")
    rate = brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    resid = f(rate)
    if abs(resid) > tol:
        raise NumericalError(f"equivalence premium residual {resid:.3e} exceeds {tol:g}")
    log.debug("equivalence premium %.6f (residual %.2e)", rate, resid)
    return float(rate)


@dataclass(frozen=True)
class TechnicalReserves:
    """Everything the technical basis contributes to the projection.

    ``reserve``, ``benefit_reserve`` and ``unit_reserve`` live on the
    biometric states; ``unit_full`` is the unit bonus reserve extended to the
    full state space.
    """

    reserve: StatewiseGrid
    benefit_reserve: StatewiseGrid
    unit_reserve: StatewiseGrid
    unit_full: StatewiseGrid
    rho: FreePolicyFactor

    @classmethod
    def compute(cls, basis: TechnicalBasis, payments: PaymentSpec, bonus: PaymentSpec,
                grid: TimeGrid) -> "TechnicalReserves":
        model = basis.rates.model
        V, Vp, Vd = solve_thiele_many(basis, [payments, payments.benefits(), bonus], grid)
        rho = free_policy_factor(V, Vp)
        return cls(V, Vp, Vd, extend_unit_reserves(model, Vd), rho)

    def surrender_payment(self, t) -> np.ndarray:
        return self._state0(self.reserve, t)

    def unit_surrender_payment(self, t) -> np.ndarray:
        return self._state0(self.unit_reserve, t)

    @staticmethod
    def _state0(res: StatewiseGrid, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tt = np.clip(t, 0.0, res.grid.horizon)
        v = hermite(tt.ravel(), res.grid, res.values[:, 0], res.slope_right[:, 0],
                    res.slope_left[:, 0])
        return v.reshape(t.shape)
