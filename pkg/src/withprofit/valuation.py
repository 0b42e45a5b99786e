"""Monte Carlo aggregation, alternative estimators and path-simulation oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cashflows import CashFlowDensity, discount
from .errors import ConfigurationError
from .esg import Scenario
from .projection import Precomputed, Strategy

STREAM_CHUNK = 50_000


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error."""

    mean: float
    se: float
    n: int

    @classmethod
    def from_samples(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            raise ConfigurationError("no samples to aggregate")
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        return cls(float(v.mean()), se, int(v.size))

    def within(self, other: "Estimate", n_se: float = 3.0) -> bool:
        return abs(self.mean - other.mean) <= n_se * float(np.hypot(self.se, other.se))


def value_bonus(bonus_values) -> Estimate:
    """``V^b(0)`` from per-scenario values of ``int D(t) a^b(0, t) dt``."""
    return Estimate.from_samples(bonus_values)


def value_predetermined(density: CashFlowDensity, curve) -> float:
    """``V°(0)``: the predetermined cash flow discounted at the time-0 curve."""
    return discount(density, curve)


def unit_price_estimator(unit_price_values) -> Estimate:
    """Alternative ``V^b(0)`` valuing each dividend at the market price of a unit.

    The per-scenario values are accumulated by the projection: in general
    mode ``int D sum_j src_j V†_j(t; r_t) dt`` with ``src_j`` the dividend
    inflow into ``p^Q_j``; in state-independent mode ``int D dQ/dt V†(t; r_t) dt``.
    """
    return Estimate.from_samples(unit_price_values)


# -- path simulation ---------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    """Estimates from simulated insurance paths in one frozen scenario.

    ``years`` are the integer times at which ``p^Q`` is estimated and
    ``pq_count`` the number of paths contributing a nonzero value to each
    estimate (the normal approximation behind a standard error needs many).
    ``bonus_buckets`` estimate ``E[Q(anchor) B†(bucket after anchor)]`` and
    ``predetermined_buckets`` the undiscounted ``A°(0, bucket)`` on 1-year buckets.
    """

    years: np.ndarray
    pq_mean: np.ndarray
    pq_se: np.ndarray
    pq_count: np.ndarray
    bonus_value: Estimate
    anchor: float
    bonus_buckets: np.ndarray
    bonus_buckets_se: np.ndarray
    predetermined_buckets: np.ndarray
    predetermined_buckets_se: np.ndarray
    n_paths: int
    extra: dict = field(default_factory=dict, repr=False)


def _path_tables(pre: Precomputed):
    """Per-step (mid-point) rates, payments and lumps used by the path simulation."""
    inputs, grid, model = pre.inputs, pre.grid, pre.model
    S, J = model.n_states, model.J
    mid = pre.grid.stage_times()[:, 1]
    gen = pre.gen_stages[:, 1]
    lam = -np.einsum("mjj->mj", gen)
    mu = gen.copy()
    idx = np.arange(S)
    mu[:, idx, idx] = 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.where(lam[..., None] > 0, np.cumsum(mu, axis=-1) / lam[..., None], 1.0)
    cum[..., -1] = 1.0

    def streams(spec, surrender):
        soj = np.zeros((len(mid), S))
        lump = np.zeros((len(mid), S, S))
        for j in model.biometric_states:
            b = spec.sojourn_rate(j, mid)
            soj[:, j] = b
            soj[:, model.free_copy(j)] = np.maximum(b, 0.0)
        for (j, k) in spec.transition:
            b = spec.lump(j, k, mid)
            lump[:, j, k] = b
            lump[:, model.free_copy(j), model.free_copy(k)] = np.maximum(b, 0.0)
        s = surrender(mid)
        lump[:, 0, J] += s
        lump[:, J + 1, 2 * J + 1] += np.maximum(s, 0.0)
        return soj, lump

    res = pre.reserves
    pred = streams(inputs.payments, res.surrender_payment)
    bonus = streams(inputs.bonus, res.unit_surrender_payment)
    return gen, lam, cum, pred, bonus


def _frozen_states(pre, lam, strategy, pred, bonus):
    """States that never change again and in which nothing accrues."""
    S = pre.model.n_states
    out = np.zeros(S, dtype=bool)
    for j in range(S):
        out[j] = (np.all(lam[:, j] == 0)
                  and np.all(strategy.gamma0[..., j] == 0) and np.all(strategy.gamma1[..., j] == 0)
                  and np.all(strategy.gamma2[..., j] == 0)
                  and np.all(pred[0][:, j] == 0) and np.all(bonus[0][:, j] == 0))
    return out


def _grow(Q, a, g, s):
    """``Q' = a Q + g`` over a duration ``s`` with constant coefficients."""
    small = np.abs(a * s) < 1e-12
    e = np.expm1(np.where(small, 0.0, a * s))
    phi = np.where(small, s, e / np.where(small, 1.0, a))
    return Q * (1.0 + e) + g * phi


def z_path_oracle(pre: Precomputed, scenario: Scenario, x_path: np.ndarray, n_paths: int,
                  seed: int, strategy="example1", anchor: float = 10.0) -> OracleResult:
    """Simulate the insurance state process in one frozen financial scenario.

    ``x_path[m]`` is the excess rate ``r_delta - r*`` used on ``[t_m, t_{m+1})``,
    taken from the projection of the same scenario.  Along each path ``Q``
    solves ``dQ = delta(t, Z(t)) / V*†_{Z(t)}(t) dt`` exactly between jumps,
    with the free-policy factor applied at the simulated conversion time.
    Jump times are sampled exactly within a step from the mid-step rates,
    at most one jump per step.  ``strategy`` is a precomputed name or a
    :class:`Strategy`.
    """
    if isinstance(strategy, Strategy):
        strat = strategy
    elif strategy in pre.strategies:
        strat = pre.strategies[strategy]
    else:
        raise ConfigurationError(f"strategy {strategy!r} not precomputed")
    if n_paths < 2:
        raise ConfigurationError("at least two paths are required")
    grid, model = pre.grid, pre.model
    M, h = grid.n_steps, grid.step
    S, J = model.n_states, model.J
    t = grid.times
    x_path = np.asarray(x_path, dtype=float)
    if x_path.shape[0] < M:
        raise ConfigurationError("x_path must cover every step")
    gen, lam, cum, (soj_p, lump_p), (soj_b, lump_b) = _path_tables(pre)
    frozen = _frozen_states(pre, lam, strat, (soj_p, lump_p), (soj_b, lump_b))
    g0, g1, g2 = (g[:, 1] for g in (strat.gamma0, strat.gamma1, strat.gamma2))
    logD = np.log(scenario.D)
    rho = pre.reserves.rho
    is_free = np.array([model.is_free(j) for j in range(S)])
    per_year = int(round(1.0 / h))
    if abs(per_year * h - 1.0) > 1e-9:
        raise ConfigurationError("the oracle needs a step dividing one year")
    n_years = int(round(grid.horizon))
    year_steps = np.arange(n_years + 1) * per_year
    m_anchor = grid.index(anchor)
    bucket_of_step = np.arange(M) // per_year

    pq_sum = np.zeros((n_years + 1, S))
    pq_sq = np.zeros((n_years + 1, S))
    pq_n = np.zeros((n_years + 1, S), dtype=np.int64)
    vb_all = np.zeros(n_paths)
    bb_all = np.zeros((n_paths, n_years))
    pb_all = np.zeros((n_paths, n_years))
    Q0 = pre.inputs.Q0
    z0 = model.initial_state

    def record(k, z, Q):
        for j in range(S):
            v = np.where(z == j, Q, 0.0)
            pq_sum[k, j] += v.sum()
            pq_sq[k, j] += (v * v).sum()
            pq_n[k, j] += np.count_nonzero(v)

    for c0 in range(0, n_paths, STREAM_CHUNK):
        n = min(STREAM_CHUNK, n_paths - c0)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(seed, spawn_key=(c0 // STREAM_CHUNK,))))
        z = np.full(n, z0)
        Q = np.full(n, float(Q0))
        rt = np.ones(n)
        Qa = np.zeros(n)
        vb = np.zeros(n)
        bb = np.zeros((n, n_years))
        pb = np.zeros((n, n_years))
        record(0, z, Q)
        for m in range(M):
            if m == m_anchor:
                Qa = Q.copy()
            act = np.flatnonzero(~frozen[z])
            if act.size:
                za, Qc, rta = z[act], Q[act], rt[act]
                xm = x_path[m]
                u1 = rng.random(act.size)
                u2 = rng.random(act.size)
                lz = lam[m, za]
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = np.where(lz > 0, -np.log1p(-u1) / np.where(lz > 0, lz, 1.0), np.inf)
                jump = s < h
                s = np.where(jump, s, h)
                b = bucket_of_step[m]
                dl0, dl1 = logD[m], logD[m + 1]

                def D_at(u):
                    return np.exp(dl0 + (dl1 - dl0) * u / h)

                def segment(zz, Qs, r_t, u_start, dur):
                    scale = np.where(is_free[zz], r_t, 1.0)
                    a = xm * g2[m, zz]
                    g = xm * (g0[m, zz] + g1[m, zz] * r_t)
                    Qe = _grow(Qs, a, g, dur)
                    Da, De = D_at(u_start), D_at(u_start + dur)
                    vb_inc = soj_b[m, zz] * dur * 0.5 * (Da * Qs + De * Qe)
                    return Qe, vb_inc, soj_b[m, zz] * dur, scale * soj_p[m, zz] * dur

                Qm, vinc, bunit, pinc = segment(za, Qc, rta, 0.0, s)
                vb[act] += vinc
                pb[act, b] += pinc
                if m >= m_anchor:
                    bb[act, b] += Qa[act] * bunit
                Qn = Qm
                if np.any(jump):
                    jj = np.flatnonzero(jump)
                    zf = za[jj]
                    zt = (u2[jj, None] > cum[m, zf]).sum(axis=1)
                    zt = np.minimum(zt, S - 1)
                    tj = s[jj]
                    Dj = D_at(tj)
                    vb[act[jj]] += Dj * Qm[jj] * lump_b[m, zf, zt]
                    scale = np.where(is_free[zf], rta[jj], 1.0)
                    pb[act[jj], b] += scale * lump_p[m, zf, zt]
                    if m >= m_anchor:
                        bb[act[jj], b] += Qa[act[jj]] * lump_b[m, zf, zt]
                    conv = (zf == 0) & (zt == model.free_entry)
                    rj = rta[jj].copy()
                    if np.any(conv):
                        rj[conv] = rho(t[m] + tj[conv])
                    Q2, vinc2, bunit2, pinc2 = segment(zt, Qm[jj], rj, tj, h - tj)
                    vb[act[jj]] += vinc2
                    pb[act[jj], b] += pinc2
                    if m >= m_anchor:
                        bb[act[jj], b] += Qa[act[jj]] * bunit2
                    Qn = Qm.copy()
                    Qn[jj] = Q2
                    za = za.copy()
                    za[jj] = zt
                    rta = rta.copy()
                    rta[jj] = rj
                z[act], Q[act], rt[act] = za, Qn, rta
            if (m + 1) % per_year == 0:
                record((m + 1) // per_year, z, Q)
        vb_all[c0:c0 + n] = vb
        bb_all[c0:c0 + n] = bb
        pb_all[c0:c0 + n] = pb

    mean = pq_sum / n_paths
    var = np.maximum(pq_sq / n_paths - mean ** 2, 0.0) * n_paths / (n_paths - 1)
    se = np.sqrt(var / n_paths)

    def mse(a):
        return a.mean(axis=0), a.std(axis=0, ddof=1) / np.sqrt(n_paths)

    bm, bs = mse(bb_all)
    pm, ps = mse(pb_all)
    return OracleResult(year_steps * h, mean, se, pq_n, Estimate.from_samples(vb_all), float(anchor),
                        bm, bs, pm, ps, n_paths)


def density_buckets(density: CashFlowDensity, width: float = 1.0) -> np.ndarray:
    """Integral of a density over consecutive buckets starting at its anchor."""
    h = density.grid.step
    per = int(round(width / h))
    right, left = density.right, density.left
    n = (len(right) - 1) // per
    out = np.zeros(n)
    for k in range(n):
        a, b = k * per, (k + 1) * per
        out[k] = 0.5 * h * (right[a:b].sum() + left[a + 1:b + 1].sum())
    return out
