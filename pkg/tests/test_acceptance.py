"""Acceptance suite: the eight end-to-end criteria at their stated tolerances.

Each test prints one line ``[criterion k] PASS|FAIL ...`` to the terminal,
then asserts.  Criteria 1 and 3 share the full N = 10000, h = 0.01 run.
"""

from __future__ import annotations

import numpy as np
import pytest

from withprofit.cashflows import FlatCurve, density_from_probabilities, discount
from withprofit.esg import bond_price, iter_batches, simulate_batch
from withprofit.kolmogorov import kolmogorov_forward
from withprofit.odes import TimeGrid
from withprofit.payments import PaymentSpec, state_rates
from withprofit.projection import (
    GENERAL,
    STATEINDEP,
    ConstantDividends,
    pq_rk4_step,
    project_general,
    project_stateindep,
)
from withprofit.rates import TechnicalBasis, TransitionRateSet
from withprofit.reserves import solve_thiele
from withprofit.runner import run_valuation, write_summary
from withprofit.states import StateModel
from withprofit.valuation import z_path_oracle


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def full_run(example_cfg, pre01):
    cfg = example_cfg.with_run(scenarios=10000, step=0.01, mode="both")
    return run_valuation(cfg, pre01)


# -- 1 -----------------------------------------------------------------------------

def test_criterion_1_equivalence_of_procedures(full_run, report):
    g, s = full_run.modes[GENERAL].bonus, full_run.modes[STATEINDEP].bonus
    rel = abs(g.mean - s.mean) / g.mean
    ok = report(1, rel <= 1e-3, f"N=10000 h=0.01: V^b general {g.mean:.2f} (SE {g.se:.2f}), "
                f"state-independent {s.mean:.2f} (SE {s.se:.2f}), relative difference "
                f"{100 * full_run.relative_difference:.5f}% (tolerance 0.1%)")
    assert ok


def test_criterion_1_desk_variant(example_cfg, pre02, report):
    res = run_valuation(example_cfg.with_run(scenarios=1000, step=0.02, mode="both"), pre02)
    g, s = res.modes[GENERAL].bonus, res.modes[STATEINDEP].bonus
    rel = abs(g.mean - s.mean) / g.mean
    ok = report(1, rel <= 5e-3, f"desk N=1000 h=0.02: relative difference "
                f"{100 * res.relative_difference:.5f}% (tolerance 0.5%), runtime "
                f"{res.runtime:.0f} s")
    assert ok


# -- 2 -----------------------------------------------------------------------------

def test_criterion_2_lifted_strategy_is_pathwise_identical(pre01, report):
    batch = simulate_batch(pre01.inputs.vasicek, pre01.grid, 20240101, range(12))
    lifted = project_general(pre01, batch, "lifted", keep_paths=True)
    si = project_stateindep(pre01, batch, keep_paths=True)
    p = pre01.p.values
    worst = 0.0
    for i in range(len(batch)):
        pq = lifted.paths["pQ"][i]
        gap = np.max(np.abs(pq - si.paths["Q"][i][:, None] * p))
        worst = max(worst, gap / np.max(np.abs(pq)))
    ok = report(2, worst <= 1e-6, f"max over 12 scenarios of sup|pQ - Q p| / max|pQ| = "
                f"{worst:.2e} (tolerance 1e-6)")
    assert ok


# -- 3 -----------------------------------------------------------------------------

def test_criterion_3_balance(full_run, report):
    V0 = full_run.V0
    lines, ok = [], 1e4 <= abs(V0) <= 1e5 and V0 < 0
    for mode, r in full_run.modes.items():
        bal = abs(V0 + r.bonus.mean - full_run.config.u0) / abs(V0)
        ok &= bal <= 1e-2
        lines.append(f"{mode} V°+V^b = {V0 + r.bonus.mean:.2f} ({100 * bal:.3f}% of |V°|)")
    assert report(3, ok, f"V°(0) = {V0:.2f}; " + "; ".join(lines) + " (tolerance 1%)")


# -- 4 -----------------------------------------------------------------------------

def test_criterion_4_path_simulation_oracle(example_cfg, pre01, report):
    """Every integer year and state, strictly at 3 standard errors."""
    seed = example_cfg.run.seed
    batch = simulate_batch(pre01.inputs.vasicek, pre01.grid, seed, [0])
    res = project_general(pre01, batch, keep_paths=True)
    x = res.paths["r_delta"][0] - pre01.inputs.r_star(pre01.grid.times)
    orc = z_path_oracle(pre01, batch.scenario(0), x, 200_000, seed + 1)
    idx = np.round(orc.years / pre01.grid.step).astype(int)
    ode = res.paths["pQ"][0][idx]
    diff = np.abs(ode - orc.pq_mean)
    bad = np.where(orc.pq_se > 0, diff > 3.0 * orc.pq_se, diff > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(orc.pq_se > 0, diff / orc.pq_se, np.where(diff > 0, np.inf, 0.0))
    k, j = np.unravel_index(np.argmax(z), z.shape)
    vb_ode, vb = res.bonus_value[0], orc.bonus_value
    vb_ok = abs(vb_ode - vb.mean) <= 3.0 * vb.se
    ok = not bad.any() and vb_ok
    report(4, ok, f"2e5 paths: {int(bad.sum())} of {bad.size} (year, state) cells beyond 3 SE, "
           f"worst |z| = {z[k, j]:.2f} at year {orc.years[k]:g} state {j} "
           f"(ODE {ode[k, j]:.4e}, MC {orc.pq_mean[k, j]:.4e} +- {orc.pq_se[k, j]:.1e}, "
           f"{orc.pq_count[k, j]} paths); bonus value ODE {vb_ode:.2f} vs MC {vb.mean:.2f} "
           f"(SE {vb.se:.2f}, {'within' if vb_ok else 'beyond'} 3 SE)")
    assert vb_ok
    assert not bad.any()


# -- 5 -----------------------------------------------------------------------------

def test_criterion_5_discount_factor_martingale(example_cfg, report):
    params = example_cfg.inputs().vasicek
    grid = TimeGrid(70.0, 0.01)
    T = np.array([10.0, 30.0, 70.0])
    cols = [grid.index(t) for t in T]
    D = np.concatenate([b.D[:, cols] for b in iter_batches(params, grid, 20240101, 10000, 500)])
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / np.sqrt(len(D))
    P = np.array([float(bond_price(params, 0.0, params.r0, t)) for t in T])
    z = (mean - P) / se
    ok = bool(np.all(np.abs(z) <= 3.0))
    detail = ", ".join(f"T={t:g}: E[D]={m:.5f} P={p:.5f} z={zz:+.2f}"
                       for t, m, p, zz in zip(T, mean, P, z))
    assert report(5, ok, f"N=10000 h=0.01: {detail} (tolerance 3 SE)")


# -- 6 -----------------------------------------------------------------------------

def _pure_endowment_error(h):
    r = lambda t: 0.02 + 0.01 * np.sin(0.3 * np.asarray(t, dtype=float))  # noqa: E731
    m = StateModel(1, 0, 10.0)
    grid = TimeGrid(10.0, h)
    # paying r(t) continuously makes 1 - V the value of a unit at maturity
    V = solve_thiele(TechnicalBasis(r, TransitionRateSet(m, {})), PaymentSpec(m, {0: r}),
                     grid).values[:, 0]
    t = grid.times
    exact = np.exp(-(0.02 * (10.0 - t) - (0.01 / 0.3) * (np.cos(3.0) - np.cos(0.3 * t))))
    return np.max(np.abs((1.0 - V) / exact - 1.0))


def _two_state_error(h, mu=0.07):
    m = StateModel(2, 0, 20.0)
    rs = TransitionRateSet(m, {(0, 1): lambda t: np.full_like(t, mu)})
    p = kolmogorov_forward(rs, 0, TimeGrid(20.0, h)).probabilities
    exact = np.exp(-mu * p.times)
    return max(np.max(np.abs(p.values[:, 0] / exact - 1.0)),
               np.max(np.abs(p.values[1:, 1] / -np.expm1(-mu * p.times[1:]) - 1.0)))


def _linear_q_error(pre01):
    d0, d2 = 1.5, 0.03
    batch = simulate_batch(pre01.inputs.vasicek, pre01.grid, 1, [0])
    Q = project_stateindep(pre01, batch, keep_paths=True,
                           dividends=ConstantDividends(d0, d2)).paths["Q"][0]
    t = pre01.grid.times
    exact = d0 * np.expm1(d2 * t) / d2
    return np.max(np.abs(Q[1:] / exact[1:] - 1.0))


def _duality_error(example_cfg):
    grid = TimeGrid(70.0, 0.01)
    basis = example_cfg.technical
    worst = 0.0
    for spec in (example_cfg.payments.benefits(), example_cfg.bonus):
        V = solve_thiele(basis, spec, grid).values[0, 0]
        p = kolmogorov_forward(basis.rates, 0, grid).probabilities
        dens = density_from_probabilities(
            p, lambda t, spec=spec: state_rates(spec, basis.rates, t, free=False))
        worst = max(worst, abs(discount(dens, FlatCurve(0.01)) / V - 1.0))
    return worst


def test_criterion_6_ode_unit_oracles(example_cfg, pre01, report):
    errs = {"Thiele pure endowment": _pure_endowment_error(0.01),
            "Kolmogorov two-state": _two_state_error(0.01),
            "linear Q": _linear_q_error(pre01)}
    dual = _duality_error(example_cfg)
    ok = all(e <= 1e-6 for e in errs.values()) and dual <= 1e-5
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert report(6, ok, f"h=0.01 relative errors: {detail} (tolerance 1e-6); "
                  f"Thiele-cash-flow duality {dual:.1e} (tolerance 1e-5)")


# -- 7 -----------------------------------------------------------------------------

def test_criterion_7_conservation(pre01, report):
    p, pr = pre01.p.values, pre01.p_rho.values
    rows = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    dom = float(np.max(pr - p))
    cr, cl = pre01.c_dagger
    adag = float(min(pre01.a_dagger.right.min(), pre01.a_dagger.left.min(), cr.min(), cl.min()))
    batch = simulate_batch(pre01.inputs.vasicek, pre01.grid, 20240101, range(4))
    res = project_general(pre01, batch, keep_paths=True)
    strat = pre01.strategies["example1"]
    x = res.paths["r_delta"] - pre01.inputs.r_star(pre01.grid.times)
    pq = res.paths["pQ"]
    agg = 0.0
    for m in range(pre01.grid.n_steps):
        y_new, inflow = pq_rk4_step(pre01, strat, m, pq[:, m], x[:, m], total_source=True)
        gap = np.abs(y_new.sum(axis=1) - pq[:, m].sum(axis=1) - inflow)
        agg = max(agg, float(np.max(gap / np.maximum(1.0, np.abs(y_new.sum(axis=1))))))
    ok = rows <= 1e-8 and dom <= 1e-10 and adag >= 0.0 and agg <= 1e-8
    assert report(7, ok, f"row sums {rows:.1e} (1e-8); max(p_rho - p) {dom:.1e} (1e-10); "
                  f"min a† {adag:.1e} (>= 0); aggregation identity {agg:.1e} (1e-8)")


# -- 8 -----------------------------------------------------------------------------

def test_criterion_8_determinism(example_cfg, tmp_path, report):
    base = example_cfg.with_run(scenarios=24, step=0.05, chunk=5, mode="both")
    blobs = []
    for k, workers in enumerate((1, 1, 2, 4)):
        res = run_valuation(base.with_run(workers=workers))
        js, _ = write_summary(res, tmp_path / f"run{k}")
        blobs.append(js.read_bytes())
    ok = all(b == blobs[0] for b in blobs)
    assert report(8, ok, "summary.json bytes identical across repeated runs and 1, 2, 4 workers")
