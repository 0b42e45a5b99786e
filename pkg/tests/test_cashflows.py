"""Cash-flow densities, discounting and the tabulated market values."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from withprofit.cashflows import (
    CashFlowDensity,
    FlatCurve,
    ForwardCurve,
    RateRange,
    VasicekCurve,
    density_from_probabilities,
    discount,
    export_density,
    predetermined_cashflow,
    state_rate_function,
    trapezoid,
    unit_bonus_cashflow_grid,
)
from withprofit.errors import ConfigurationError, GridError, MemoryBudgetError
from withprofit.kolmogorov import kolmogorov_forward
from withprofit.odes import TimeGrid
from withprofit.payments import PaymentSpec, state_rates
from withprofit.reserves import solve_thiele


def _const_density(value=1.0, horizon=1.0, h=0.01):
    g = TimeGrid(horizon, h)
    v = np.full(g.n_steps + 1, value)
    return CashFlowDensity(g, 0.0, v, v.copy())


def test_flat_curve_closed_form():
    r = 0.05
    assert discount(_const_density(), FlatCurve(r)) == pytest.approx(-np.expm1(-r) / r, rel=1e-6)


def test_zero_curve_gives_plain_integral():
    d = _const_density(2.5, horizon=4.0)
    assert discount(d, FlatCurve(0.0)) == pytest.approx(d.integral(), rel=1e-15)
    assert d.integral() == pytest.approx(10.0, rel=1e-14)
    fc = ForwardCurve(lambda tau: np.zeros_like(tau))
    assert discount(d, fc) == pytest.approx(10.0, rel=1e-14)


def test_forward_curve_matches_flat_curve():
    d = _const_density(horizon=3.0)
    fc = ForwardCurve(lambda tau: np.full_like(tau, 0.04))
    assert discount(d, fc) == pytest.approx(discount(d, FlatCurve(0.04)), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=11, max_size=11),
       st.floats(min_value=-0.05, max_value=0.2), st.floats(min_value=1e-3, max_value=0.1))
def test_discount_monotone_in_rate(values, r, dr):
    v = np.asarray(values)
    if not np.any(v[1:] > 0):  # strictness needs mass after the anchor
        v[3] = 1.0
    g = TimeGrid(5.0, 0.5)
    d = CashFlowDensity(g, 0.0, v, v.copy())
    assert discount(d, FlatCurve(r + dr)) < discount(d, FlatCurve(r))


def test_density_validation():
    g = TimeGrid(1.0, 0.1)
    with pytest.raises(ConfigurationError):
        CashFlowDensity(g, 0.5, np.zeros(11), np.zeros(11))
    with pytest.raises(Exception):
        CashFlowDensity(g, 0.0, np.full(11, np.nan), np.zeros(11))
    assert trapezoid(np.ones(1), 0.1) == 0.0


def test_zero_payments_give_zero_density(pre02, example_cfg):
    empty = PaymentSpec(example_cfg.model)
    d = predetermined_cashflow(pre02.p_rho, empty, example_cfg.market, None)
    assert np.all(d.right == 0) and np.all(d.left == 0)


def test_predetermined_value_sign_and_scale(pre02):
    params = pre02.inputs.vasicek
    V0 = discount(pre02.a_circ, VasicekCurve(params, params.r0))
    assert -1e5 < V0 < -1e4


def test_unit_bonus_density_nonnegative(pre02):
    assert pre02.a_dagger.right.min() >= 0 and pre02.a_dagger.left.min() >= 0
    cr, cl = pre02.c_dagger
    assert cr.min() >= 0 and cl.min() >= 0


@pytest.mark.parametrize("t", [0.0, 10.0, 24.98, 25.0, 50.0, 69.98])
def test_anchored_table_matches_direct_discount(pre02, t):
    params = pre02.inputs.vasicek
    for r in (-0.02, 0.01, 0.043, 0.1):
        curve = VasicekCurve(params, r)
        for dens, tab in ((pre02.a_circ, pre02.tab_circ), (pre02.a_dagger, pre02.tab_dagger0)):
            restricted = pre02.restricted(dens, t)
            value = discount(restricted, curve)
            dur = discount(restricted, curve, weight=params.B)
            got = tab.at(t, r)[0]
            scale = discount(restricted, FlatCurve(0.0)) + 1.0
            assert got[0] == pytest.approx(value, abs=1e-9 * scale)
            assert got[1] == pytest.approx(dur, abs=1e-8 * scale)


@pytest.mark.parametrize("t", [0.0, 12.0, 25.0, 40.0])
def test_statewise_table_matches_forward_pass(pre02, t):
    params = pre02.inputs.vasicek
    r = 0.035
    got = pre02.tab_state.at(t, r)[0]
    for i in range(pre02.model.n_states):
        d = pre02.state_density(t, i)
        value = discount(d, VasicekCurve(params, r))
        assert got[i, 0] == pytest.approx(value, rel=1e-9, abs=1e-6)


def test_table_rejects_rates_outside_range(pre02):
    with pytest.raises(GridError, match="outside the tabulated range"):
        pre02.tab_circ.at(10.0, pre02.rate_range.hi + 0.01)
    with pytest.raises(ConfigurationError):
        RateRange(0.1, 0.0)


@pytest.fixture(scope="module")
def unit_grid(pre02):
    inputs = pre02.inputs
    c_fn = state_rate_function(inputs.bonus, inputs.market, pre02.reserves.unit_surrender_payment)
    return unit_bonus_cashflow_grid(pre02.steps, c_fn, pre02.grid, anchor_step=1.0), c_fn


def test_unit_grid_chapman_kolmogorov(pre02, unit_grid):
    g, _ = unit_grid
    p = pre02.p.values
    direct = pre02.a_dagger.rate
    for t in (5.0, 10.0, 30.0, 60.0):
        m = pre02.grid.index(t)
        a = int(round(t))
        via = p[m] @ g.values[a]
        np.testing.assert_allclose(via[m + 1:], direct[m + 1:], rtol=1e-6, atol=1e-9)


def test_unit_grid_anchor_zero_is_the_time_zero_flow(pre02, unit_grid):
    g, _ = unit_grid
    np.testing.assert_allclose(g.values[0, 0], pre02.a_dagger.rate, rtol=1e-12, atol=1e-9)


def test_unit_grid_structure(pre02, unit_grid):
    g, c_fn = unit_grid
    assert g.values.min() >= 0.0
    for dead in (2, 3, 6, 7):
        assert np.all(g.values[:, dead] == 0.0)
    # a_i(t, t) is the state's own payment rate just after t
    for a, t in enumerate(g.anchors[:-1]):
        m = pre02.grid.index(t)
        np.testing.assert_allclose(g.values[a, :, m], c_fn(np.array([t + 1e-9]))[0], rtol=1e-12)
    d = g.density(10.0, 1)
    assert d.anchor == 10.0 and len(d.right) == pre02.grid.n_steps + 1 - 500
    with pytest.raises(GridError):
        g.density(10.5, 1)
    mid = g.at(10.5)
    np.testing.assert_allclose(mid[:, 600:], 0.5 * (g.values[10, :, 600:] + g.values[11, :, 600:]))
    assert np.all(mid[:, :525] == 0.0)


def test_unit_grid_memory_budget(pre02, unit_grid):
    _, c_fn = unit_grid
    with pytest.raises(MemoryBudgetError, match="coarser anchor step"):
        unit_bonus_cashflow_grid(pre02.steps, c_fn, pre02.grid, anchor_step=0.1, memory_budget=1e6)
    with pytest.raises(ConfigurationError):
        unit_bonus_cashflow_grid(pre02.steps, c_fn, pre02.grid, anchor_step=0.03)


@pytest.mark.parametrize("which", ["benefits", "bonus"])
def test_thiele_cashflow_duality(example_cfg, which):
    """Reserve at 0 equals the technical cash flow discounted at r*."""
    grid = TimeGrid(70.0, 0.01)
    basis = example_cfg.technical
    spec = example_cfg.payments.benefits() if which == "benefits" else example_cfg.bonus
    V = solve_thiele(basis, spec, grid).values[0, 0]
    p = kolmogorov_forward(basis.rates, 0, grid).probabilities
    dens = density_from_probabilities(p, lambda t: state_rates(spec, basis.rates, t, free=False))
    value = discount(dens, FlatCurve(0.01))
    assert abs(value / V - 1.0) <= 1e-5


def test_density_csv(tmp_path):
    path = export_density(_const_density(horizon=1.0, h=0.5), tmp_path, "flow")
    assert path.read_text(encoding="utf-8").splitlines() == ["s,rate", "0.0,1.0", "0.5,1.0",
                                                             "1.0,1.0"]
