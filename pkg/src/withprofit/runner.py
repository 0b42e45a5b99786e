"""Run orchestration: precomputation, the scenario loop and aggregation.

Scenarios are processed in fixed-size chunks.  Each chunk is simulated and
projected independently (its random streams are keyed by scenario index), and
the per-scenario values are concatenated in chunk order, so results do not
depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cashflows import VasicekCurve, export_density
from .config import RunConfig, parse_config
from .esg import export_scenario, simulate_batch
from .projection import (
    GENERAL,
    STATEINDEP,
    BatchResult,
    Precomputed,
    default_rate_range,
    precompute,
    project_general,
    project_stateindep,
)
from .valuation import (
    Estimate,
    OracleResult,
    unit_price_estimator,
    value_bonus,
    value_predetermined,
    z_path_oracle,
)

log = logging.getLogger(__name__)

MAX_EXPORTED = 10


@dataclass(frozen=True)
class ModeResult:
    mode: str
    bonus: Estimate
    unit_price: Estimate
    terminal: Estimate
    min_pq: float


@dataclass
class RunResult:
    config: RunConfig
    premium: float
    V0: float
    modes: dict
    runtime: float = 0.0
    per_scenario: dict = field(default_factory=dict, repr=False)

    @property
    def relative_difference(self) -> float | None:
        if GENERAL in self.modes and STATEINDEP in self.modes:
            g = self.modes[GENERAL].bonus.mean
            s = self.modes[STATEINDEP].bonus.mean
            return (g - s) / g if g != 0 else 0.0
        return None


def _project(pre: Precomputed, batch, mode: str, keep_paths: bool = False) -> BatchResult:
    if mode == GENERAL:
        return project_general(pre, batch, keep_paths=keep_paths)
    return project_stateindep(pre, batch, keep_paths=keep_paths)


def _run_chunk(pre: Precomputed, modes, seed: int, start: int, stop: int) -> dict:
    batch = simulate_batch(pre.inputs.vasicek, pre.grid, seed, range(start, stop))
    out = {}
    for mode in modes:
        r = _project(pre, batch, mode)
        out[mode] = np.stack([r.bonus_value, r.unit_price, r.balance, r.min_pq])
    return out


# worker-process state, built once per process by the initializer
_WORKER: dict = {}


def _init_worker(raw: dict, run_overrides: dict, premium: float) -> None:
    cfg = parse_config(raw).with_run(**run_overrides)
    inputs = cfg.inputs(premium_rate=premium)
    _WORKER["pre"] = precompute(inputs, cfg.grid(), cfg.run.modes,
                                _rate_range(cfg, inputs))
    _WORKER["modes"] = cfg.run.modes
    _WORKER["seed"] = cfg.run.seed


def _worker_chunk(bounds):
    return _run_chunk(_WORKER["pre"], _WORKER["modes"], _WORKER["seed"], *bounds)


def _rate_range(cfg: RunConfig, inputs):
    return default_rate_range(inputs.vasicek, cfg.grid(), n_nodes=cfg.run.chebyshev_nodes)


def build(cfg: RunConfig) -> Precomputed:
    inputs = cfg.inputs()
    return precompute(inputs, cfg.grid(), cfg.run.modes, _rate_range(cfg, inputs))


def run_valuation(cfg: RunConfig, pre: Precomputed | None = None) -> RunResult:
    """Run all configured procedures on the same scenario set."""
    t0 = time.perf_counter()
    run = cfg.run
    pre = pre or build(cfg)
    modes = run.modes
    bounds = [(a, min(a + run.chunk, run.scenarios)) for a in range(0, run.scenarios, run.chunk)]
    if run.workers == 1 or len(bounds) == 1:
        chunks = [_run_chunk(pre, modes, run.seed, a, b) for a, b in bounds]
    else:
        overrides = {k: getattr(run, k) for k in ("mode", "scenarios", "step", "seed", "chunk",
                                                  "chebyshev_nodes")}
        premium = pre.inputs.payments.premium.rate if pre.inputs.payments.premium else None
        with ProcessPoolExecutor(max_workers=run.workers, initializer=_init_worker,
                                 initargs=(dict(cfg.raw), overrides, premium)) as ex:
            chunks = list(ex.map(_worker_chunk, bounds))
    per = {m: np.concatenate([c[m] for c in chunks], axis=1) for m in modes}
    curve = VasicekCurve(pre.inputs.vasicek, pre.inputs.vasicek.r0)
    V0 = value_predetermined(pre.a_circ, curve)
    results = {}
    for m in modes:
        vb, r2, term, mpq = per[m]
        results[m] = ModeResult(m, value_bonus(vb), unit_price_estimator(r2),
                                Estimate.from_samples(term), float(mpq.min()))
    premium = pre.inputs.payments.premium.rate if pre.inputs.payments.premium else 0.0
    return RunResult(cfg, float(premium), float(V0), results, time.perf_counter() - t0, per)


def _num(x) -> float | None:
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def summary_record(res: RunResult) -> dict:
    """Machine-readable summary; deterministic for a given configuration and seed."""
    cfg = res.config
    rec = {
        "N": cfg.run.scenarios,
        "h": cfg.run.step,
        "seed": cfg.run.seed,
        "chunk": cfg.run.chunk,
        "kappa": cfg.kappa,
        "u0": cfg.u0,
        "Q0": cfg.Q0,
        "premium_rate": res.premium,
        "V0": res.V0,
        "mode": cfg.run.mode,
        "results": {},
    }
    for m, r in res.modes.items():
        rec["results"][m] = {
            "Vb": r.bonus.mean,
            "Vb_se": _num(r.bonus.se),
            "Vb_unit_price": r.unit_price.mean,
            "Vb_unit_price_se": _num(r.unit_price.se),
            "V0_plus_Vb": res.V0 + r.bonus.mean,
            "balance_relative": (res.V0 + r.bonus.mean - cfg.u0) / abs(res.V0) if res.V0 else None,
            "terminal_discounted_assets": r.terminal.mean,
            "terminal_discounted_assets_se": _num(r.terminal.se),
            "min_pq": r.min_pq,
        }
    rel = res.relative_difference
    if rel is not None:
        rec["relative_difference"] = rel
    return rec


def summary_text(res: RunResult) -> str:
    cfg = res.config
    lines = [
        f"scenarios N={cfg.run.scenarios}  step h={cfg.run.step:g}  seed={cfg.run.seed}",
        f"premium rate          {res.premium:14.2f}",
        f"V°(0)                 {res.V0:14.2f}",
    ]
    for m, r in res.modes.items():
        lines.append(f"V^b(0) {m:<16}{r.bonus.mean:14.2f}  (SE {r.bonus.se:.2f})")
        lines.append(f"  alternative estimate {r.unit_price.mean:14.2f}  (SE {r.unit_price.se:.2f})")
        lines.append(f"  V°(0) + V^b(0)       {res.V0 + r.bonus.mean:14.2f}")
    rel = res.relative_difference
    if rel is not None:
        lines.append(f"relative difference   {100 * rel:14.5f} %")
    lines.append(f"runtime               {res.runtime:14.1f} s")
    return "\n".join(lines)


def write_summary(res: RunResult, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / "summary.json"
    js.write_text(json.dumps(summary_record(res), indent=2, sort_keys=True) + "\n",
                  encoding="utf-8")
    txt = out_dir / "summary.txt"
    txt.write_text(summary_text(res) + "\n", encoding="utf-8")
    (out_dir / "timing.json").write_text(
        json.dumps({"runtime_seconds": res.runtime}) + "\n", encoding="utf-8")
    return js, txt


def _write_rows(path: Path, header, columns) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])
    return path


def export_paths(cfg: RunConfig, pre: Precomputed, out_dir: Path) -> list[Path]:
    """Per-scenario CSVs of the short rate, bond, ``p^Q``, bonus terms and assets."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n = min(cfg.run.scenarios, MAX_EXPORTED)
    if cfg.run.scenarios > n:
        log.warning("exporting paths of the first %d scenarios only", n)
    batch = simulate_batch(pre.inputs.vasicek, pre.grid, cfg.run.seed, range(n))
    t = pre.grid.times
    S = pre.model.n_states
    files = [export_density(pre.a_circ, out_dir, "cashflow_predetermined"),
             export_density(pre.a_dagger, out_dir, "cashflow_unit_bonus")]
    c_r, c_l = pre.c_dagger
    c_bar = 0.5 * (c_r + c_l)
    c_bar[0], c_bar[-1] = c_r[0], c_l[-1]
    for i in range(n):
        files.append(export_scenario(batch.scenario(i), out_dir))
    for mode in cfg.run.modes:
        res = _project(pre, batch, mode, keep_paths=True)
        tag = "general" if mode == GENERAL else "stateindep"
        for i in range(n):
            k = int(batch.indices[i])
            p = res.paths
            files.append(_write_rows(out_dir / f"assets_{tag}_{k:05d}.csv",
                                     ["t", "U", "r_delta", "Q", "eta"],
                                     [t, p["U"][i], p["r_delta"][i], p["Q"][i], p["eta"][i]]))
            if mode == GENERAL:
                pq = p["pQ"][i]
                files.append(_write_rows(out_dir / f"pq_{k:05d}.csv",
                                         ["t"] + [f"pQ_{j}" for j in range(S)],
                                         [t] + [pq[:, j] for j in range(S)]))
                terms = pq * c_bar
                files.append(_write_rows(out_dir / f"bonus_terms_{k:05d}.csv",
                                         ["t"] + [f"ab_{j}" for j in range(S)] + ["ab"],
                                         [t] + [terms[:, j] for j in range(S)]
                                         + [terms.sum(axis=1)]))
    return files


def run_oracle(cfg: RunConfig, pre: Precomputed, out_dir: Path) -> tuple[OracleResult, dict]:
    """Path-simulation oracle on scenario 0 versus the projected ``p^Q``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = simulate_batch(pre.inputs.vasicek, pre.grid, cfg.run.seed, [0])
    res = project_general(pre, batch, keep_paths=True)
    x = res.paths["r_delta"][0] - pre.inputs.r_star(pre.grid.times)
    orc = z_path_oracle(pre, batch.scenario(0), x, cfg.run.oracle_paths, cfg.run.seed + 1)
    idx = np.round(orc.years / pre.grid.step).astype(int)
    pq = res.paths["pQ"][0][idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(orc.pq_se > 0, (pq - orc.pq_mean) / orc.pq_se, 0.0)
    S = pre.model.n_states
    _write_rows(out_dir / "oracle_pq.csv",
                ["t"] + [f"ode_{j}" for j in range(S)] + [f"mc_{j}" for j in range(S)]
                + [f"se_{j}" for j in range(S)],
                [orc.years] + [pq[:, j] for j in range(S)] + [orc.pq_mean[:, j] for j in range(S)]
                + [orc.pq_se[:, j] for j in range(S)])
    report = {
        "paths": orc.n_paths,
        "max_abs_z_pq": float(np.max(np.abs(z))),
        "bonus_value_ode": float(res.bonus_value[0]),
        "bonus_value_mc": orc.bonus_value.mean,
        "bonus_value_mc_se": orc.bonus_value.se,
    }
    (out_dir / "oracle.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return orc, report
