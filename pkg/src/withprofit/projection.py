"""Scenario-based projection of the shape of the insurance business.

Two procedures are implemented, both vectorised over a batch of scenarios:

* :func:`project_general` integrates the Q-modified transition probabilities
  ``p^Q_{z0 j}(0, t)`` jointly with the asset value ``U``;
* :func:`project_stateindep` integrates the number of bonus units ``Q(t)``
  jointly with ``U`` for dividends of the state-independent form.

Per step the shape and the controls (second order rate, hedge ratio) are
evaluated at the left endpoint.  The excess rate ``x = r_delta - r_star`` is
then frozen while ``p^Q`` (or ``Q``) is advanced by RK4, using deterministic
coefficients evaluated at the RK4 stage times.  ``U`` is advanced by an
Euler-Maruyama step with the bond increment taken from the scenario and the
outgoing cash flow integrated by the trapezoid rule over the step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
import numpy as np

from .cashflows import (
    CashFlowDensity,
    DiscountTable,
    RateRange,
    VasicekCurve,
    anchored_discount_table,
    discount,
    predetermined_cashflow,
    state_rate_function,
    statewise_discount_table,
    unit_bonus_cashflow,
)
from .errors import ConfigurationError, DivergenceError
from .esg import ScenarioBatch, VasicekParams
from .kolmogorov import kolmogorov_forward, rho_kolmogorov_forward
from .odes import EPS_T, StatewiseGrid, TimeGrid, ratio_with_limit
from .payments import PaymentSpec
from .rates import TechnicalBasis, TransitionRateSet
from .reserves import TechnicalReserves
from .states import StateModel

log = logging.getLogger(__name__)

DENOM_EPS = 1e-12
GENERAL = "general"
STATEINDEP = "state-independent"


@dataclass(frozen=True)
class ModelInputs:
    """Everything that defines a valuation run apart from numerics."""

    model: StateModel
    technical: TechnicalBasis
    market: TransitionRateSet
    payments: PaymentSpec
    bonus: PaymentSpec
    vasicek: VasicekParams
    kappa: float = 0.2
    u0: float = 0.0
    Q0: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigurationError("kappa must lie in [0, 1]")
        if not self.bonus.nonnegative:
            raise ConfigurationError("the unit bonus stream must be declared nonnegative")
        if self.market.model != self.model or self.technical.rates.model != self.model:
            raise ConfigurationError("rates and state model do not match")

    def r_star(self, t):
        return np.asarray(self.technical.interest(t), dtype=float)


# -- shape and controls --------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    """Assets ``U``, guaranteed cash flow ``Abar_g(t, .)`` and mean technical reserve."""

    t: float
    U: float
    Abar_g: CashFlowDensity
    Vbar_star: float
    curve: object

    @property
    def Vbar_g(self) -> float:
        """Market value of the guaranteed cash flow, always recomputed."""
        return discount(self.Abar_g, self.curve)


def second_order_rate(r_star, U, Vbar_star, Vbar_g, kappa: float, eps: float = DENOM_EPS):
    """``r* + kappa (U - max(Vbar*, Vbar_g))^+ / Vbar*``; ``r*`` where ``Vbar* <= eps``."""
    U, Vs, Vg = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (U, Vbar_star, Vbar_g)))
    excess = np.maximum(U - np.maximum(Vs, Vg), 0.0)
    ok = Vs > eps
    x = np.where(ok, kappa * excess / np.where(ok, Vs, 1.0), 0.0)
    return np.asarray(r_star, dtype=float) + x


def shape_second_order_rate(shape: Shape, r_star: float, kappa: float) -> float:
    return float(second_order_rate(r_star, shape.U, shape.Vbar_star, shape.Vbar_g, kappa))


def dividend_general_from_rate(r_delta, r_star, t, j: int, reserves: TechnicalReserves,
                               model: StateModel):
    """Dividend coefficients ``(delta0, delta1, delta2)`` of the second-order-rate strategy."""
    x = np.asarray(r_delta, dtype=float) - np.asarray(r_star, dtype=float)
    t = np.asarray(t, dtype=float)
    J = model.J
    zero = np.zeros(np.broadcast(x, t).shape)
    d0 = d1 = zero
    if j < J:
        d0 = x * reserves.reserve.at(t)[..., j]
    elif J < j < 2 * J + 1:
        d1 = x * reserves.benefit_reserve.at(t)[..., model.mirror(j)]
    d2 = x * reserves.unit_full.at(t)[..., j]
    return (np.reshape(d0 + zero, zero.shape), np.reshape(d1 + zero, zero.shape),
            np.reshape(d2 + zero, zero.shape))


def dividend_stateindep_from_rate(r_delta, r_star, Vbar_circ, Vbar_dagger, dVbar_circ=0.0,
                                  dVbar_dagger=0.0):
    """``(delta0~, delta2~)`` of the state-independent second-order-rate strategy."""
    x = np.asarray(r_delta, dtype=float) - np.asarray(r_star, dtype=float)
    ratio = ratio_with_limit(Vbar_circ, Vbar_dagger, dVbar_circ, dVbar_dagger,
                             what="mean technical unit reserve")
    return x * ratio, x


def hedging_eta(duration_value, t, S1, params: VasicekParams):
    """``int psi(t, s) P(t, s) Abar_g(t, ds) / (psi(t, n) S1(t))``."""
    psi_n = params.B(params.maturity - np.asarray(t, dtype=float))
    if np.any(psi_n <= 0):
        raise ConfigurationError("the hedge ratio is undefined at the bond maturity")
    return np.asarray(duration_value) / (psi_n * np.asarray(S1))


# -- precomputation ------------------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """Per-state dividend coefficients ``gamma_i = delta_i / (x V*†_j)``.

    Arrays have shape (M, 3, S): one value per step, RK4 stage and state.
    The p^Q source term is ``x (gamma0 p + gamma1 p_rho + gamma2 p^Q)``.
    """

    name: str
    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray


@dataclass(frozen=True)
class Precomputed:
    """Scenario-independent inputs of both procedures, shared read-only."""

    inputs: ModelInputs
    grid: TimeGrid
    reserves: TechnicalReserves
    p: StatewiseGrid
    p_rho: StatewiseGrid
    steps: np.ndarray = field(repr=False)
    gen_stages: np.ndarray = field(repr=False)
    a_circ: CashFlowDensity = field(repr=False)
    a_dagger: CashFlowDensity = field(repr=False)
    c_dagger: tuple = field(repr=False)
    Vbar_circ: np.ndarray = field(repr=False)
    Vbar_dagger: np.ndarray = field(repr=False)
    si_ratio: np.ndarray = field(repr=False)
    source_p: np.ndarray = field(repr=False)
    strategies: dict = field(repr=False)
    rate_range: RateRange
    tab_circ: DiscountTable = field(repr=False)
    tab_dagger0: DiscountTable = field(repr=False)
    tab_state: DiscountTable | None = field(repr=False, default=None)

    @property
    def model(self) -> StateModel:
        return self.inputs.model

    def check_rates(self, r: np.ndarray) -> None:
        self.rate_range.to_unit(r)

    def state_density(self, t: float, state: int) -> CashFlowDensity:
        """``a†_state(t, .)`` from a forward pass started at ``t``."""
        grid = self.grid
        m = grid.index(t)
        cr, cl = self.c_dagger
        cbar = 0.5 * (cr + cl)
        cbar[-1] = cl[-1]
        row = np.zeros(self.model.n_states)
        row[state] = 1.0
        vals = np.empty(grid.n_steps + 1 - m)
        vals[0] = cr[m, state]
        for l in range(m + 1, grid.n_steps + 1):
            row = row @ self.steps[l - 1]
            vals[l - m] = row @ cbar[l]
        return CashFlowDensity(grid, grid.times[m], vals, vals.copy())

    def restricted(self, density: CashFlowDensity, t: float) -> CashFlowDensity:
        m = self.grid.index(t)
        right = density.right[m:].copy()
        left = density.left[m:].copy()
        return CashFlowDensity(self.grid, self.grid.times[m], right, left)


def default_rate_range(params: VasicekParams, grid: TimeGrid, n_sd: float = 9.0,
                       n_nodes: int = 16) -> RateRange:
    """Short-rate range covering all Euler paths except with negligible probability."""
    mean, var = params.euler_moments(grid)
    sd = np.sqrt(var)
    lo = float(np.min(mean - n_sd * sd)) - 0.01
    hi = float(np.max(mean + n_sd * sd)) + 0.01
    return RateRange(lo, hi, n_nodes)


def _stage_values(sg: StatewiseGrid):
    return sg.at_stages(), sg.slopes_at_stages()


def _example1_strategy(model: StateModel, reserves: TechnicalReserves) -> Strategy:
    J = model.J
    V, dV = _stage_values(reserves.reserve)
    Vp, dVp = _stage_values(reserves.benefit_reserve)
    U, dU = _stage_values(reserves.unit_full)
    shape = U.shape
    g0, g1 = np.zeros(shape), np.zeros(shape)
    g0[..., :J] = ratio_with_limit(V, U[..., :J], dV, dU[..., :J],
                                   what="unit reserve in a premium state")
    free = slice(J + 1, 2 * J + 1)
    g1[..., free] = ratio_with_limit(Vp, U[..., free], dVp, dU[..., free],
                                     what="unit reserve in a free-policy state")
    g2 = ratio_with_limit(U, U, dU, dU, what="unit reserve")
    return Strategy("example1", g0, g1, g2)


def _lifted_strategy(si_ratio: np.ndarray, n_states: int) -> Strategy:
    g0 = np.repeat(si_ratio[..., None], n_states, axis=-1)
    return Strategy("lifted", g0, np.zeros_like(g0), np.ones_like(g0))


def precompute(inputs: ModelInputs, grid: TimeGrid, modes=(GENERAL, STATEINDEP),
               rate_range: RateRange | None = None) -> Precomputed:
    """Build all scenario-independent inputs on ``grid``."""
    model = inputs.model
    if abs(grid.horizon - model.horizon) > 1e-12:
        raise ConfigurationError("grid and contract horizon differ")
    unknown = set(modes) - {GENERAL, STATEINDEP}
    if unknown:
        raise ConfigurationError(f"unknown projection modes {sorted(unknown)}")
    z0 = model.initial_state
    reserves = TechnicalReserves.compute(inputs.technical, inputs.payments, inputs.bonus, grid)
    fwd = kolmogorov_forward(inputs.market, z0, grid)
    p = fwd.probabilities
    p_rho = rho_kolmogorov_forward(inputs.market, reserves.rho, z0, grid)
    a_circ = predetermined_cashflow(p_rho, inputs.payments, inputs.market,
                                    reserves.surrender_payment)
    a_dag = unit_bonus_cashflow(p, inputs.bonus, inputs.market, reserves.unit_surrender_payment)
    c_fn = state_rate_function(inputs.bonus, inputs.market, reserves.unit_surrender_payment)
    t = grid.times
    c_dagger = (c_fn(t + EPS_T), c_fn(t - EPS_T))
    for arr in c_dagger:
        arr.setflags(write=False)

    # portfolio-wide mean technical reserves at nodes and RK4 stages
    J = model.J
    bio, free = slice(0, J), slice(J + 1, 2 * J + 1)

    def mean_reserves(pv, dpv, prv, dprv, V, dV, Vp, dVp, U, dU):
        circ = (pv[..., bio] * V).sum(-1) + (prv[..., free] * Vp).sum(-1)
        dcirc = ((dpv[..., bio] * V + pv[..., bio] * dV).sum(-1)
                 + (dprv[..., free] * Vp + prv[..., free] * dVp).sum(-1))
        dag = (pv * U).sum(-1)
        ddag = (dpv * U + pv * dU).sum(-1)
        return circ, dcirc, dag, ddag

    res = reserves
    node = mean_reserves(p.values, p.slope_left, p_rho.values, p_rho.slope_left,
                         res.reserve.values, res.reserve.slope_left,
                         res.benefit_reserve.values, res.benefit_reserve.slope_left,
                         res.unit_full.values, res.unit_full.slope_left)
    p_st, dp_st = _stage_values(p)
    pr_st, dpr_st = _stage_values(p_rho)
    stage = mean_reserves(p_st, dp_st, pr_st, dpr_st, *_stage_values(res.reserve),
                          *_stage_values(res.benefit_reserve), *_stage_values(res.unit_full))
    si_ratio = ratio_with_limit(stage[0], stage[2], stage[1], stage[3],
                                what="mean technical unit reserve")
    Vbar_circ, Vbar_dagger = node[0], node[2]

    strategies = {"lifted": _lifted_strategy(si_ratio, model.n_states)}
    if GENERAL in modes:
        strategies["example1"] = _example1_strategy(model, reserves)

    rr = rate_range or default_rate_range(inputs.vasicek, grid)
    params = inputs.vasicek
    tab_circ = anchored_discount_table(a_circ, params, rr)
    tab_dag0 = anchored_discount_table(a_dag, params, rr)
    tab_state = None
    if GENERAL in modes:
        tab_state = statewise_discount_table(fwd.steps, c_fn, grid, params, rr)
    gen = inputs.market.generator(grid.stage_times())
    for arr in (gen, Vbar_circ, Vbar_dagger, si_ratio):
        arr.setflags(write=False)
    return Precomputed(inputs, grid, reserves, p, p_rho, fwd.steps, gen, a_circ, a_dag,
                       c_dagger, Vbar_circ, Vbar_dagger, si_ratio,
                       np.stack([p_st, pr_st]), strategies, rr, tab_circ, tab_dag0, tab_state)


# -- projection ------------------------------------------------------------------------


@dataclass
class BatchResult:
    """Per-scenario outputs of a batch; paths only when requested."""

    indices: np.ndarray
    mode: str
    bonus_value: np.ndarray
    unit_price: np.ndarray
    balance: np.ndarray
    min_pq: np.ndarray
    paths: dict | None = None


@dataclass(frozen=True)
class SecondOrderDividends:
    """State-independent second-order-rate rule: ``(x Vbar*°/Vbar*†, x)``."""

    def coefficients(self, pre: Precomputed, m: int, x: np.ndarray):
        """``(delta0~ at the three RK4 stages, delta2~)`` on step ``m``."""
        return x[:, None] * pre.si_ratio[m][None, :], x


@dataclass(frozen=True)
class ConstantDividends:
    """Constant ``delta0~`` and ``delta2~``, independent of the shape."""

    d0: float
    d2: float

    def coefficients(self, pre: Precomputed, m: int, x: np.ndarray):
        n = len(x)
        return np.full((n, 3), float(self.d0)), np.full(n, float(self.d2))


def q_rk4_step(d0: np.ndarray, d2: np.ndarray, Q: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of ``Q' = delta0~ + delta2~ Q``; ``d0`` holds the stage values."""
    k1 = d0[:, 0] + d2 * Q
    k2 = d0[:, 1] + d2 * (Q + 0.5 * h * k1)
    k3 = d0[:, 1] + d2 * (Q + 0.5 * h * k2)
    k4 = d0[:, 2] + d2 * (Q + h * k3)
    return Q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def pq_rk4_step(pre: Precomputed, strategy: Strategy, m: int, y: np.ndarray, x: np.ndarray,
                total_source: bool = False):
    """One RK4 step of the ``p^Q`` system on ``[t_m, t_{m+1}]`` with ``x`` frozen.

    With ``total_source`` also returns the RK4-weighted total dividend inflow
    over the step, summed over states (the Markov terms cancel in that sum).
    """
    h = pre.grid.step
    gen = pre.gen_stages[m]
    src = strategy.gamma0[m] * pre.source_p[0][m] + strategy.gamma1[m] * pre.source_p[1][m]
    g2 = strategy.gamma2[m]
    xs = x[:, None]
    ks, divs = [], []
    for stage, c in ((0, 0.0), (1, 0.5), (1, 0.5), (2, 1.0)):
        v = y if not ks else y + c * h * ks[-1]
        d = xs * (src[stage] + g2[stage] * v)
        divs.append(d)
        ks.append(v @ gen[stage] + d)
    y_new = y + (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
    if total_source:
        inflow = (h / 6.0) * (divs[0] + 2 * divs[1] + 2 * divs[2] + divs[3]).sum(axis=-1)
        return y_new, inflow
    return y_new


def _trap_weights(M: int, h: float) -> np.ndarray:
    w = np.full(M + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _project(pre: Precomputed, batch: ScenarioBatch, mode: str, strategy: Strategy | None,
             keep_paths: bool, dividends=None) -> BatchResult:
    inputs, grid = pre.inputs, pre.grid
    params = inputs.vasicek
    M, h = grid.n_steps, grid.step
    B = len(batch)
    S = pre.model.n_states
    t = grid.times
    r, S1, D = batch.r, batch.S1, batch.D
    pre.check_rates(r)
    rstar = inputs.r_star(t)
    kappa = inputs.kappa
    w = _trap_weights(M, h)
    a_circ = pre.a_circ
    c_r, c_l = pre.c_dagger
    c_bar = 0.5 * (c_r + c_l)
    c_bar[0], c_bar[-1] = c_r[0], c_l[-1]
    psi_n = params.B(params.maturity - t)
    general = mode == GENERAL
    if general:
        if pre.tab_state is None:
            raise ConfigurationError("precomputation lacks the state-wise tables")
        g_src = strategy.gamma0 * pre.source_p[0] + strategy.gamma1 * pre.source_p[1]
        g2 = strategy.gamma2
        Vdag = pre.reserves.unit_full.values
        y = np.zeros((B, S))
        y[:, pre.model.initial_state] = inputs.Q0
    else:
        dividends = dividends or SecondOrderDividends()
        y = np.full(B, float(inputs.Q0))
    U = np.full(B, float(inputs.u0))
    vb = np.zeros(B)
    rem2 = np.zeros(B)
    min_pq = np.zeros(B)
    if keep_paths:
        keep = {k: np.zeros((B, M + 1)) for k in ("U", "ab", "r_delta", "eta", "Vbar_star",
                                                   "Vbar_g", "Q")}
        keep["pQ"] = np.zeros((B, M + 1, S)) if general else None
        keep["src"] = np.zeros((B, M + 1, S)) if general else None

    def shape_values(m, yv, T):
        circ = pre.tab_circ.evaluate(m, T)
        if general:
            st = pre.tab_state.evaluate(m, T)
            vg = circ[:, 0] + np.einsum("bs,bs->b", yv, st[..., 0])
            dur = circ[:, 1] + np.einsum("bs,bs->b", yv, st[..., 1])
            vs = pre.Vbar_circ[m] + yv @ Vdag[m]
            return vg, dur, vs, st[..., 0]
        d0 = pre.tab_dagger0.evaluate(m, T)
        vg = circ[:, 0] + yv * d0[:, 0]
        dur = circ[:, 1] + yv * d0[:, 1]
        vs = pre.Vbar_circ[m] + yv * pre.Vbar_dagger[m]
        return vg, dur, vs, d0[:, 0]

    for m in range(M + 1):
        T = pre.rate_range.basis(r[:, m])
        vg, dur, vs, unit_val = shape_values(m, y, T)
        if m < M:
            x = second_order_rate(rstar[m], U, vs, vg, kappa) - rstar[m]
        else:
            x = np.zeros(B)
        ab_node = (y @ c_bar[m]) if general else y * a_dagger_node(pre, m)
        vb += w[m] * D[:, m] * ab_node
        if general:
            src = x[:, None] * (g_src[min(m, M - 1), 0 if m < M else 2]
                                + g2[min(m, M - 1), 0 if m < M else 2] * y)
            rem2 += w[m] * D[:, m] * np.einsum("bs,bs->b", src, unit_val)
            min_pq = np.minimum(min_pq, y.min(axis=1))
        else:
            if m < M:
                d0, d2 = dividends.coefficients(pre, m, x)
                dq = d0[:, 0] + d2 * y
            else:
                dq = np.zeros(B)
            rem2 += w[m] * D[:, m] * dq * unit_val
            min_pq = np.minimum(min_pq, y)
        if keep_paths:
            keep["U"][:, m] = U
            keep["ab"][:, m] = ab_node
            keep["r_delta"][:, m] = rstar[m] + x
            keep["Vbar_star"][:, m] = vs
            keep["Vbar_g"][:, m] = vg
            if general:
                keep["pQ"][:, m] = y
                keep["src"][:, m] = src
                keep["Q"][:, m] = y.sum(axis=1)
            else:
                keep["Q"][:, m] = y
        if m == M:
            break
        eta = hedging_eta(dur, t[m], S1[:, m], params) if psi_n[m] > 0 else np.zeros(B)
        if keep_paths:
            keep["eta"][:, m] = eta
        # advance p^Q or Q over [t_m, t_{m+1}] with x frozen
        if general:
            y_new = pq_rk4_step(pre, strategy, m, y, x)
            out_r = y @ c_r[m]
            out_l = y_new @ c_l[m + 1]
        else:
            d0, d2 = dividends.coefficients(pre, m, x)
            y_new = q_rk4_step(d0, d2, y, h)
            out_r = y * pre.a_dagger.right[m]
            out_l = y_new * pre.a_dagger.left[m + 1]
        outflow = 0.5 * h * (a_circ.right[m] + a_circ.left[m + 1] + out_r + out_l)
        U = (U + r[:, m] * (U - eta * S1[:, m]) * h + eta * (S1[:, m + 1] - S1[:, m])
             - outflow)
        y = y_new
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(U))):
            bad = ~np.isfinite(U) | ~np.all(np.isfinite(y.reshape(B, -1)), axis=1)
            raise DivergenceError(
                f"projection diverged at t={t[m + 1]:g} in scenario {int(batch.indices[np.argmax(bad)])}"
            )
    paths = None
    if keep_paths:
        keep["D"] = D.copy()
        keep["r"] = r.copy()
        keep["S1"] = S1.copy()
        paths = keep
    return BatchResult(batch.indices.copy(), mode, vb, rem2, D[:, -1] * U, min_pq, paths)


def a_dagger_node(pre: Precomputed, m: int) -> float:
    return float(pre.a_dagger.rate[m])


def project_general(pre: Precomputed, batch: ScenarioBatch, strategy="example1",
                    keep_paths: bool = False) -> BatchResult:
    """General procedure: Q-modified transition probabilities and assets.

    ``strategy`` is the name of a precomputed :class:`Strategy` or a strategy.
    """
    if not isinstance(strategy, Strategy):
        if strategy not in pre.strategies:
            raise ConfigurationError(f"strategy {strategy!r} not precomputed")
        strategy = pre.strategies[strategy]
    return _project(pre, batch, GENERAL, strategy, keep_paths)


def project_stateindep(pre: Precomputed, batch: ScenarioBatch, keep_paths: bool = False,
                       dividends=None) -> BatchResult:
    """State-independent procedure: number of bonus units and assets.

    ``dividends`` supplies ``(delta0~, delta2~)`` per step; the default is the
    second-order-rate rule.
    """
    return _project(pre, batch, STATEINDEP, None, keep_paths, dividends)


# -- shape assembly (reference implementation, used for checks and exports) ----------


def assemble_shape_general(pre: Precomputed, t: float, pQ: np.ndarray, U: float,
                           r: float) -> Shape:
    """Shape from ``p^Q(t)``: ``Abar_g = A°(0, .) + sum_j p^Q_j A†_j(t, .)``."""
    m = pre.grid.index(t)
    base = pre.restricted(pre.a_circ, t)
    right, left = base.right.copy(), base.left.copy()
    for j in np.flatnonzero(np.asarray(pQ) != 0):
        d = pre.state_density(t, int(j))
        right += pQ[j] * d.right
        left += pQ[j] * d.left
    dens = CashFlowDensity(pre.grid, pre.grid.times[m], right, left)
    vs = pre.Vbar_circ[m] + float(np.asarray(pQ) @ pre.reserves.unit_full.values[m])
    return Shape(float(t), float(U), dens, vs, VasicekCurve(pre.inputs.vasicek, float(r)))


def assemble_shape_stateindep(pre: Precomputed, t: float, Q: float, U: float, r: float) -> Shape:
    """Shape from ``Q(t)``: ``Abar_g = A°(0, .) + Q A†(0, .)``."""
    m = pre.grid.index(t)
    base = pre.restricted(pre.a_circ, t)
    bonus = pre.restricted(pre.a_dagger, t)
    dens = CashFlowDensity(pre.grid, pre.grid.times[m], base.right + Q * bonus.right,
                           base.left + Q * bonus.left)
    vs = pre.Vbar_circ[m] + Q * pre.Vbar_dagger[m]
    return Shape(float(t), float(U), dens, vs, VasicekCurve(pre.inputs.vasicek, float(r)))
