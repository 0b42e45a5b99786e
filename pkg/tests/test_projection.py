"""Shape assembly, controls, dividends and the two projection procedures."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from withprofit.cashflows import CashFlowDensity, VasicekCurve, discount
from withprofit.errors import (
    ConfigurationError,
    DegenerateDivisionError,
    DivergenceError,
    GridError,
)
from withprofit.esg import ScenarioBatch, bond_price, simulate_batch
from withprofit.odes import TimeGrid
from withprofit.projection import (
    GENERAL,
    ConstantDividends,
    assemble_shape_general,
    assemble_shape_stateindep,
    dividend_general_from_rate,
    dividend_stateindep_from_rate,
    hedging_eta,
    precompute,
    pq_rk4_step,
    project_general,
    project_stateindep,
    second_order_rate,
)

from toys import modified, toy_raw
from withprofit.config import parse_config


@pytest.fixture(scope="module")
def batch02(pre02):
    return simulate_batch(pre02.inputs.vasicek, pre02.grid, 2024, range(4))


@pytest.fixture(scope="module")
def general02(pre02, batch02):
    return project_general(pre02, batch02, keep_paths=True)


@pytest.fixture(scope="module")
def stateindep02(pre02, batch02):
    return project_stateindep(pre02, batch02, keep_paths=True)


# -- controls --------------------------------------------------------------------

def test_second_order_rate_examples():
    assert float(second_order_rate(0.01, 110.0, 100.0, 105.0, 0.2)) == pytest.approx(0.02)
    assert float(second_order_rate(0.01, 110.0, 100.0, 105.0, 0.0)) == 0.01
    assert float(second_order_rate(0.01, 104.0, 100.0, 105.0, 0.2)) == 0.01
    assert float(second_order_rate(0.01, 110.0, 0.0, 105.0, 0.2)) == 0.01


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1))
def test_second_order_rate_never_below_technical_rate(U, Vs, Vg, kappa):
    r = float(second_order_rate(0.01, U, Vs, Vg, kappa))
    assert r >= 0.01
    if U <= max(Vs, Vg):
        assert r == 0.01


def test_general_dividends(pre02):
    res, model = pre02.reserves, pre02.model
    assert all(np.all(d == 0) for d in dividend_general_from_rate(0.01, 0.01, 10.0, 0, res, model))
    for j in (3, 7):
        assert all(np.all(d == 0) for d in dividend_general_from_rate(0.03, 0.01, 10.0, j, res, model))
    d0, d1, d2 = dividend_general_from_rate(0.03, 0.01, 10.0, 0, res, model)
    assert d1 == 0.0
    assert float(d0) == pytest.approx(0.02 * res.reserve.at(10.0)[0, 0], rel=1e-12)
    assert float(d2) == pytest.approx(0.02 * res.unit_full.at(10.0)[0, 0], rel=1e-12)
    d0, d1, d2 = dividend_general_from_rate(0.03, 0.01, 10.0, 5, res, model)
    assert d0 == 0.0
    assert float(d1) == pytest.approx(0.02 * res.benefit_reserve.at(10.0)[0, 1], rel=1e-12)
    assert float(d2) == pytest.approx(0.02 * res.unit_full.at(10.0)[0, 5], rel=1e-12)


def test_stateindep_dividends(pre02):
    assert dividend_stateindep_from_rate(0.01, 0.01, 5.0, 2.0) == (0.0, 0.0)
    d0, d2 = dividend_stateindep_from_rate(0.03, 0.01, 5.0, 2.0)
    assert float(d0) == pytest.approx(0.05) and float(d2) == pytest.approx(0.02)
    # the mean reserve ratio is finite over the whole contract period
    assert np.all(np.isfinite(pre02.si_ratio))
    with pytest.raises(DegenerateDivisionError):
        dividend_stateindep_from_rate(0.03, 0.01, 5.0, 0.0)


def test_eta_zero_for_empty_guarantee(pre02):
    assert float(hedging_eta(0.0, 3.0, 0.8, pre02.inputs.vasicek)) == 0.0
    with pytest.raises(ConfigurationError):
        hedging_eta(1.0, 70.0, 1.0, pre02.inputs.vasicek)


@pytest.mark.parametrize("t", [0.0, 20.0, 60.0])
def test_eta_for_a_flow_at_maturity(pre02, t):
    """A guarantee concentrated at n is hedged by holding that many bonds."""
    params, grid = pre02.inputs.vasicek, pre02.grid
    m = grid.index(t)
    right = np.zeros(grid.n_steps + 1 - m)
    left = right.copy()
    left[-1] = right[-1] = 1.0 / grid.step  # unit mass in the last half cell
    dens = CashFlowDensity(grid, t, right, left)
    curve = VasicekCurve(params, 0.03)
    S1 = float(bond_price(params, t, 0.03))
    eta = float(hedging_eta(discount(dens, curve, weight=params.B), t, S1, params))
    assert eta * S1 == pytest.approx(discount(dens, curve), rel=1e-12)


def test_eta_positive_at_time_zero(general02, stateindep02):
    assert np.all(general02.paths["eta"][:, 0] > 0)
    assert np.all(stateindep02.paths["eta"][:, 0] > 0)


# -- shapes ----------------------------------------------------------------------

def test_shape_without_bonus(pre02):
    S = pre02.model.n_states
    for t in (0.0, 17.0):
        sh = assemble_shape_general(pre02, t, np.zeros(S), 1.0, 0.02)
        base = pre02.restricted(pre02.a_circ, t)
        np.testing.assert_array_equal(sh.Abar_g.right, base.right)
        assert sh.Vbar_star == pre02.Vbar_circ[pre02.grid.index(t)]
        si = assemble_shape_stateindep(pre02, t, 0.0, 1.0, 0.02)
        np.testing.assert_array_equal(si.Abar_g.left, base.left)


def test_shape_with_one_unit(pre02):
    t = 30.0
    sh = assemble_shape_stateindep(pre02, t, 1.0, 0.0, 0.02)
    a = pre02.restricted(pre02.a_circ, t)
    b = pre02.restricted(pre02.a_dagger, t)
    np.testing.assert_array_equal(sh.Abar_g.right, a.right + b.right)
    m = pre02.grid.index(t)
    assert sh.Vbar_star == pre02.Vbar_circ[m] + pre02.Vbar_dagger[m]


@pytest.mark.parametrize("t", [5.0, 25.0, 44.0])
def test_general_shape_equals_stateindep_shape_for_proportional_pq(pre02, t):
    Q = 0.37
    m = pre02.grid.index(t)
    g = assemble_shape_general(pre02, t, Q * pre02.p.values[m], 0.0, 0.02)
    s = assemble_shape_stateindep(pre02, t, Q, 0.0, 0.02)
    np.testing.assert_allclose(g.Abar_g.rate, s.Abar_g.rate, rtol=1e-10, atol=1e-10)
    assert g.Vbar_star == pytest.approx(s.Vbar_star, rel=1e-10)
    assert g.Vbar_g == pytest.approx(s.Vbar_g, rel=1e-10)


def test_shape_consistency_along_a_projection(pre02, general02):
    """V̄^g used by the controls equals the value recomputed from Ā^g."""
    paths = general02.paths
    for i in range(2):
        for t in (0.0, 10.0, 25.0, 50.0, 69.0):
            m = pre02.grid.index(t)
            sh = assemble_shape_general(pre02, t, paths["pQ"][i, m], paths["U"][i, m],
                                        paths["r"][i, m])
            assert paths["Vbar_g"][i, m] == pytest.approx(sh.Vbar_g, rel=1e-8)
            assert paths["Vbar_star"][i, m] == pytest.approx(sh.Vbar_star, rel=1e-12)


# -- projections -----------------------------------------------------------------

def test_constant_dividends_closed_form(pre01):
    d0, d2 = 1.5, 0.03
    batch = simulate_batch(pre01.inputs.vasicek, pre01.grid, 1, [0])
    res = project_stateindep(pre01, batch, keep_paths=True, dividends=ConstantDividends(d0, d2))
    t = pre01.grid.times
    exact = d0 * np.expm1(d2 * t) / d2
    Q = res.paths["Q"][0]
    assert np.max(np.abs(Q[1:] / exact[1:] - 1.0)) <= 1e-6
    np.testing.assert_allclose(res.paths["ab"][0], Q * pre01.a_dagger.rate, rtol=1e-14)


def test_zero_dividends_keep_q_at_zero(pre02, batch02):
    res = project_stateindep(pre02, batch02, keep_paths=True, dividends=ConstantDividends(0, 0))
    assert np.all(res.paths["Q"] == 0) and np.all(res.bonus_value == 0)


def _without_surplus_sharing(pre):
    return dataclasses.replace(pre, inputs=dataclasses.replace(pre.inputs, kappa=0.0))


def test_kappa_zero_gives_no_bonus(pre02, batch02, general02):
    pre = _without_surplus_sharing(pre02)
    g = project_general(pre, batch02, keep_paths=True)
    s = project_stateindep(pre, batch02, keep_paths=True)
    for r in (g, s):
        assert np.all(r.bonus_value == 0) and np.all(r.unit_price == 0)
        assert np.all(r.paths["Q"] == 0)
        np.testing.assert_array_equal(r.paths["r_delta"], np.broadcast_to(0.01, r.paths["r_delta"].shape))
    assert np.all(g.paths["pQ"] == 0)
    np.testing.assert_allclose(g.paths["U"], s.paths["U"], rtol=1e-12, atol=1e-6)


def test_lifted_strategy_reproduces_stateindep(pre02, batch02, stateindep02):
    lifted = project_general(pre02, batch02, "lifted", keep_paths=True)
    np.testing.assert_allclose(lifted.bonus_value, stateindep02.bonus_value, rtol=1e-6)
    ab_l, ab_s = lifted.paths["ab"], stateindep02.paths["ab"]
    for i in range(len(batch02)):
        assert np.max(np.abs(ab_l[i] - ab_s[i])) <= 1e-6 * np.max(np.abs(ab_s[i]))


def test_aggregation_identity(pre02, general02):
    """The summed p^Q advances by exactly the total dividend inflow of each step."""
    strat = pre02.strategies["example1"]
    paths = general02.paths
    rstar = pre02.inputs.r_star(pre02.grid.times)
    x = paths["r_delta"] - rstar
    pq = paths["pQ"]
    worst = 0.0
    for m in range(pre02.grid.n_steps):
        y_new, inflow = pq_rk4_step(pre02, strat, m, pq[:, m], x[:, m], total_source=True)
        np.testing.assert_allclose(y_new, pq[:, m + 1], rtol=1e-13, atol=1e-15)
        gap = np.abs(y_new.sum(axis=1) - pq[:, m].sum(axis=1) - inflow)
        worst = max(worst, float(np.max(gap / np.maximum(1.0, np.abs(y_new.sum(axis=1))))))
    assert worst <= 1e-8


def test_nonnegativity(general02, stateindep02):
    assert general02.min_pq.min() >= -1e-10
    assert stateindep02.min_pq.min() >= 0.0
    assert np.all(np.diff(stateindep02.paths["Q"], axis=1) >= -1e-12)
    assert np.all(general02.paths["ab"] >= 0) and np.all(stateindep02.paths["ab"] >= 0)
    assert np.all(general02.paths["r_delta"] >= 0.01)


def test_stateindep_units_accumulate_the_mean_reserve(pre02, stateindep02):
    """V̄*† dQ = (r^δ - r*) V̄* dt at every left endpoint."""
    p = stateindep02.paths
    x = p["r_delta"][:, :-1] - 0.01
    Q = p["Q"][:, :-1]
    dQ = x * (pre02.si_ratio[:, 0] + Q)
    lhs = pre02.Vbar_dagger[:-1] * dQ
    rhs = x * p["Vbar_star"][:, :-1]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_bonus_values_are_discounted_flows(pre02, general02):
    p = general02.paths
    h = pre02.grid.step
    integrand = p["D"] * p["ab"]
    vb = h * (integrand.sum(axis=1) - 0.5 * (integrand[:, 0] + integrand[:, -1]))
    np.testing.assert_allclose(general02.bonus_value, vb, rtol=1e-12)
    np.testing.assert_allclose(general02.balance, p["D"][:, -1] * p["U"][:, -1], rtol=1e-12)


def test_divergence_is_reported(pre02, batch02):
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError, match="scenario"):
            project_stateindep(pre02, batch02, dividends=ConstantDividends(1.0, 20.0))


def test_rates_outside_table_range(pre02, batch02):
    r = np.array(batch02.r)
    r[1, 100] = pre02.rate_range.hi + 0.05
    bad = ScenarioBatch(batch02.indices, batch02.grid, r, batch02.S1, batch02.D, batch02.dW)
    with pytest.raises(GridError):
        project_general(pre02, bad)


def test_unknown_strategy_and_mode(pre02, batch02):
    with pytest.raises(ConfigurationError):
        project_general(pre02, batch02, strategy="nope")
    with pytest.raises(ConfigurationError):
        precompute(pre02.inputs, pre02.grid, modes=("fast",))
    with pytest.raises(ConfigurationError):
        precompute(pre02.inputs, TimeGrid(60.0, 0.1))


def test_vanishing_unit_reserve_with_dividends_is_rejected():
    raw = modified(toy_raw(), "product.bonus.sojourn",
                   {"0": [{"family": "constant", "a": 1.0, "end": 5.0}]})
    cfg = parse_config(raw)
    with pytest.raises(DegenerateDivisionError, match="unit reserve"):
        precompute(cfg.inputs(), cfg.grid(), modes=(GENERAL,))
