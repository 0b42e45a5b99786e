"""Kolmogorov forward equations, plain and rho-modified."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, StepSizeError
from .odes import EPS_T, StatewiseGrid, TimeGrid, check_finite, chain_row, rk4_row_step_matrices
from .rates import TransitionRateSet

log = logging.getLogger(__name__)

UNDERSHOOT_TOL = 1e-6


def _clip_probabilities(p: np.ndarray, what: str) -> tuple[np.ndarray, int]:
    if np.any(p < -UNDERSHOOT_TOL) or np.any(p > 1 + UNDERSHOOT_TOL):
        raise StepSizeError(
            f"{what}: probabilities leave [0, 1] by more than {UNDERSHOOT_TOL:g}; "
            "reduce the step size"
        )
    bad = (p < 0) | (p > 1)
    n = int(bad.sum())
    if n:
        log.warning("%s: clipped %d slightly out-of-range probabilities", what, n)
    return np.clip(p, 0.0, 1.0), n


def _initial(n_states: int, z0: int) -> np.ndarray:
    if not 0 <= z0 < n_states:
        raise ConfigurationError(f"initial state {z0} out of range")
    y = np.zeros(n_states)
    y[z0] = 1.0
    return y


@dataclass(frozen=True)
class ForwardSolution:
    """Probabilities ``p_{z0 j}(0, t_m)`` and the one-step matrices ``p(t_m, t_{m+1})``."""

    probabilities: StatewiseGrid
    steps: np.ndarray
    clipped: int = 0


def _check_steps(R: np.ndarray, what: str) -> np.ndarray:
    """One-step transition matrices must have entries in [0, 1] up to the tolerance."""
    bad = (R < -UNDERSHOOT_TOL) | (R > 1 + UNDERSHOOT_TOL) | ~np.isfinite(R)
    if np.any(bad):
        m = int(np.argwhere(bad)[0, 0])
        raise StepSizeError(
            f"{what}: the one-step transition matrix on step {m} is not a probability "
            "matrix; reduce the step size"
        )
    return R


def step_matrices(rates: TransitionRateSet, grid: TimeGrid) -> np.ndarray:
    """RK4 approximations of ``p(t_m, t_{m+1})``, shape (M, S, S)."""
    gen = check_finite(rates.generator(grid.stage_times()), "transition rates")
    R = rk4_row_step_matrices(gen[:, 0], gen[:, 1], gen[:, 2], grid.step)
    return _check_steps(R, "forward equations")


def _slopes(y: np.ndarray, coef: Callable, grid: TimeGrid):
    t = grid.times
    right = np.einsum("mi,mij->mj", y, coef(t + EPS_T))
    left = np.einsum("mi,mij->mj", y, coef(t - EPS_T))
    return right, left


def kolmogorov_forward(rates: TransitionRateSet, z0: int, grid: TimeGrid) -> ForwardSolution:
    """Transition probabilities from state ``z0`` at time 0."""
    R = step_matrices(rates, grid)
    p = chain_row(_initial(rates.model.n_states, z0), R)
    p, n = _clip_probabilities(check_finite(p, "transition probabilities"), "forward equations")
    right, left = _slopes(p, rates.generator, grid)
    return ForwardSolution(StatewiseGrid(grid, p, right, left), R, n)


def _rho_generator(rates: TransitionRateSet, rho: Callable):
    model = rates.model
    S = model.n_states
    free = np.array(list(model.free_states))

    def coef(t):
        t = np.asarray(t, dtype=float)
        gen = rates.generator(t)
        out = np.zeros(t.shape + (S + len(free), S + len(free)))
        out[..., :S, :S] = gen
        out[..., S:, S:] = gen[..., free[:, None], free[None, :]]
        out[..., 0, S] = rates.rate(0, model.free_entry, t) * rho(t)
        return out

    return coef


def rho_kolmogorov_forward(rates: TransitionRateSet, rho: Callable, z0: int,
                           grid: TimeGrid) -> StatewiseGrid:
    """rho-modified probabilities ``p^rho_{z0 j}(0, t)`` on the full state space.

    Premium-state components equal the plain probabilities.  Free-state
    components weight each path by ``rho(tau)``, where ``tau`` is the time of
    conversion.  From a free initial state ``tau = 0`` and ``rho(0) = 1``.
    """
    model = rates.model
    S = model.n_states
    if model.is_free(z0):
        return kolmogorov_forward(rates, z0, grid).probabilities
    coef = _rho_generator(rates, rho)
    gen = check_finite(coef(grid.stage_times()), "rho-modified rates")
    R = _check_steps(rk4_row_step_matrices(gen[:, 0], gen[:, 1], gen[:, 2], grid.step),
                     "rho-modified forward equations")
    y = chain_row(np.concatenate([_initial(S, z0), np.zeros(S - model.J - 1)]), R)
    y, _ = _clip_probabilities(check_finite(y, "rho-modified probabilities"),
                               "rho-modified forward equations")
    right, left = _slopes(y, coef, grid)
    free = slice(model.J + 1, S)
    out = []
    for arr in (y, right, left):
        full = arr[:, :S].copy()
        full[:, free] = arr[:, S:]
        out.append(full)
    return StatewiseGrid(grid, *out)
