"""Vasicek economic scenario generator with a zero-coupon bond.

The short rate follows ``dr = (beta - alpha r) dt + sigma dW`` and is
discretised by Euler-Maruyama.  The bond price ``S1(t) = P(t, n)`` is read
off the affine closed form at the simulated short rate, so ``S1(n) = 1``
exactly and the bond stays consistent with the rate path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from .errors import ConfigurationError, SimulationError
from .odes import TimeGrid


@dataclass(frozen=True)
class VasicekParams:
    beta: float
    alpha: float
    sigma: float
    r0: float
    maturity: float

    def __post_init__(self):
        for name in ("beta", "alpha", "sigma", "r0", "maturity"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"Vasicek parameter {name} is not finite")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.maturity <= 0:
            raise ConfigurationError("bond maturity must be positive")

    @property
    def mean_level(self) -> float:
        return self.beta / self.alpha

    def B(self, tau):
        """``psi``: ``(1 - exp(-alpha tau)) / alpha``."""
        return -np.expm1(-self.alpha * np.asarray(tau, dtype=float)) / self.alpha

    def A(self, tau):
        tau = np.asarray(tau, dtype=float)
        a, s = self.alpha, self.sigma
        b = self.B(tau)
        return (self.mean_level - s * s / (2 * a * a)) * (b - tau) - s * s * b * b / (4 * a)

    def dB(self, tau):
        return np.exp(-self.alpha * np.asarray(tau, dtype=float))

    def dA(self, tau):
        a, s = self.alpha, self.sigma
        b, db = self.B(tau), self.dB(tau)
        return (self.mean_level - s * s / (2 * a * a)) * (db - 1.0) - s * s * b * db / (2 * a)

    def euler_moments(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of the Euler-discretised short rate on the grid."""
        h = grid.step
        c = 1.0 - self.alpha * h
        m = np.arange(grid.n_steps + 1)
        ck = c ** m
        mean = self.r0 * ck + self.beta * h * np.where(
            abs(1 - c) > 0, (1 - ck) / (1 - c), m)
        var = self.sigma ** 2 * h * np.where(abs(1 - c * c) > 0, (1 - ck * ck) / (1 - c * c), m)
        return mean, var


def _check_order(t, s):
    if np.any(np.asarray(s) < np.asarray(t) - 1e-12):
        raise ConfigurationError("maturity s must not precede the valuation time t")


def bond_price(params: VasicekParams, t, r, s=None) -> np.ndarray:
    """``P(t, s)`` given ``r(t) = r``; ``s`` defaults to the bond maturity."""
    s = params.maturity if s is None else s
    _check_order(t, s)
    tau = np.maximum(np.asarray(s, dtype=float) - np.asarray(t, dtype=float), 0.0)
    return np.exp(params.A(tau) - params.B(tau) * np.asarray(r, dtype=float))


def forward_rate(params: VasicekParams, t, r, s) -> np.ndarray:
    """Instantaneous forward rate ``f(t, s)``; ``f(t, t) = r``."""
    _check_order(t, s)
    tau = np.maximum(np.asarray(s, dtype=float) - np.asarray(t, dtype=float), 0.0)
    return -params.dA(tau) + params.dB(tau) * np.asarray(r, dtype=float)


def scenario_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for scenario ``index``; independent of run order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass(frozen=True)
class Scenario:
    """One financial path on the grid."""

    index: int
    times: np.ndarray
    r: np.ndarray
    S1: np.ndarray
    D: np.ndarray
    dW: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r", "S1", "D"])
            for row in zip(self.times, self.r, self.S1, self.D):
                w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class ScenarioBatch:
    """Paths of several scenarios stacked along axis 0."""

    indices: np.ndarray
    grid: TimeGrid
    r: np.ndarray
    S1: np.ndarray
    D: np.ndarray
    dW: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def scenario(self, i: int) -> Scenario:
        return Scenario(int(self.indices[i]), self.grid.times, self.r[i], self.S1[i],
                        self.D[i], self.dW[i])

    @classmethod
    def from_scenarios(cls, grid: TimeGrid, scenarios: Sequence[Scenario]) -> "ScenarioBatch":
        return cls(np.array([s.index for s in scenarios]), grid,
                   np.stack([s.r for s in scenarios]), np.stack([s.S1 for s in scenarios]),
                   np.stack([s.D for s in scenarios]), np.stack([s.dW for s in scenarios]))


def simulate_batch(params: VasicekParams, grid: TimeGrid, seed: int,
                   indices: Sequence[int]) -> ScenarioBatch:
    """Simulate the scenarios with the given indices."""
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ConfigurationError("empty scenario batch")
    if grid.horizon > params.maturity + 1e-12:
        raise ConfigurationError("the bond must not mature before the contract horizon")
    M, h = grid.n_steps, grid.step
    z = np.stack([scenario_rng(seed, int(k)).standard_normal(M) for k in idx])
    dW = np.sqrt(h) * z
    c = 1.0 - params.alpha * h
    u = params.beta * h + params.sigma * dW
    path = lfilter([1.0], [1.0, -c], u, axis=1, zi=np.full((idx.size, 1), c * params.r0))[0]
    r = np.concatenate([np.full((idx.size, 1), params.r0), path], axis=1)
    t = grid.times
    S1 = bond_price(params, t[None, :], r)
    D = np.exp(-cumulative_trapezoid(r, dx=h, axis=1, initial=0.0))
    for name, arr in (("short rate", r), ("bond price", S1), ("discount factor", D)):
        bad = ~np.all(np.isfinite(arr), axis=1)
        if np.any(bad):
            raise SimulationError(f"non-finite {name} in scenario {int(idx[np.argmax(bad)])}")
    for arr in (r, S1, D, dW):
        arr.setflags(write=False)
    return ScenarioBatch(idx, grid, r, S1, D, dW)


def iter_batches(params: VasicekParams, grid: TimeGrid, seed: int, n_scenarios: int,
                 chunk: int) -> Iterator[ScenarioBatch]:
    if n_scenarios < 1:
        raise ConfigurationError("at least one scenario is required")
    for start in range(0, n_scenarios, chunk):
        yield simulate_batch(params, grid, seed, range(start, min(start + chunk, n_scenarios)))


def simulate_scenarios(params: VasicekParams, n_scenarios: int, step: float, seed: int,
                       horizon: float | None = None) -> list[Scenario]:
    """``n_scenarios`` independent paths on ``[0, horizon]`` with step ``step``."""
    grid = TimeGrid(params.maturity if horizon is None else horizon, step)
    if n_scenarios < 1:
        raise ConfigurationError("at least one scenario is required")
    batch = simulate_batch(params, grid, seed, range(n_scenarios))
    return [batch.scenario(i) for i in range(n_scenarios)]


def export_scenario(scenario: Scenario, directory) -> Path:
    path = Path(directory) / f"scenario_{scenario.index:05d}.csv"
    scenario.to_csv(path)
    return path
