"""Run configuration: TOML parsing, validation and model construction.

The document has the sections ``[product]``, ``[technical_basis]``,
``[market_basis]``, ``[esg]``, ``[strategy]`` and ``[run]``.  Rates and
payment rates are lists of parametric terms (see :mod:`withprofit.rates`)
keyed by ``"j-k"`` (transitions) or ``"j"`` (states).  All problems found are
collected and reported together, naming the offending keys.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError, NumericalInputError
from .esg import VasicekParams
from .odes import TimeGrid
from .payments import PaymentSpec, Premium
from .projection import GENERAL, STATEINDEP, ModelInputs
from .rates import TechnicalBasis, TransitionRateSet, build_rate_functions, parse_pair, term_sum
from .reserves import calibrate_premium
from .states import StateModel

MODES = (GENERAL, STATEINDEP, "both")

_SECTIONS = {
    "product": {"n_biometric", "initial_state", "horizon", "age", "labels", "premium",
                "sojourn", "transition", "bonus"},
    "technical_basis": {"interest", "rates"},
    "market_basis": {"rates", "note"},
    "esg": {"beta", "alpha", "sigma", "r0", "maturity"},
    "strategy": {"kappa", "u0", "Q0"},
    "run": {"mode", "scenarios", "step", "seed", "chunk", "workers", "output_dir",
            "chebyshev_nodes", "oracle_paths"},
}
_PREMIUM = {"state", "rate", "start", "end"}
_BONUS = {"sojourn", "transition"}


@dataclass(frozen=True)
class RunSettings:
    mode: str = "both"
    scenarios: int = 10000
    step: float = 0.01
    seed: int = 20240101
    chunk: int = 250
    workers: int = 1
    output_dir: str = "output"
    chebyshev_nodes: int = 16
    oracle_paths: int = 200000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"run.mode must be one of {MODES}")
        if self.scenarios < 1:
            raise ConfigurationError("run.scenarios must be at least 1")
        if not self.step > 0:
            raise ConfigurationError("run.step must be positive")
        if self.chunk < 1 or self.workers < 1:
            raise ConfigurationError("run.chunk and run.workers must be at least 1")
        if self.chebyshev_nodes < 4:
            raise ConfigurationError("run.chebyshev_nodes must be at least 4")
        if self.oracle_paths < 1:
            raise ConfigurationError("run.oracle_paths must be at least 1")

    @property
    def modes(self) -> tuple[str, ...]:
        return (GENERAL, STATEINDEP) if self.mode == "both" else (self.mode,)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``inputs`` is built on demand for a given step."""

    raw: Mapping[str, Any] = field(repr=False)
    model: StateModel
    technical: TechnicalBasis
    market: TransitionRateSet
    payments: PaymentSpec
    bonus: PaymentSpec
    vasicek: VasicekParams
    kappa: float
    u0: float
    Q0: float
    run: RunSettings
    equivalence_premium: bool = False

    def with_run(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, run=replace(self.run, **changes))

    def grid(self) -> TimeGrid:
        return TimeGrid(self.model.horizon, self.run.step)

    def inputs(self, premium_rate: float | None = None) -> ModelInputs:
        """Model inputs on the run grid; an equivalence premium is calibrated here."""
        payments = self.payments
        if premium_rate is not None and payments.premium is not None:
            payments = payments.with_premium_rate(premium_rate)
        elif self.equivalence_premium:
            rate = calibrate_premium(self.technical, payments, self.grid())
            payments = payments.with_premium_rate(rate)
        return ModelInputs(self.model, self.technical, self.market, payments, self.bonus,
                           self.vasicek, self.kappa, self.u0, self.Q0)


class _Problems:
    def __init__(self):
        self.items: list[str] = []

    def add(self, key: str, msg: str) -> None:
        self.items.append(f"{key}: {msg}")

    def guard(self, key: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ConfigurationError, NumericalInputError, TypeError, ValueError, KeyError) as exc:
            self.add(key, str(exc))
            return None

    def raise_if_any(self) -> None:
        if self.items:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(self.items))


def _section(raw, name, problems: _Problems) -> dict:
    sec = raw.get(name)
    if sec is None:
        problems.add(name, "missing section")
        return {}
    if not isinstance(sec, dict):
        problems.add(name, "must be a table")
        return {}
    extra = set(sec) - _SECTIONS[name]
    for key in sorted(extra):
        problems.add(f"{name}.{key}", "unknown key")
    return sec


def _float(sec, key, problems, default=None, where=""):
    val = sec.get(key, default)
    name = f"{where}.{key}" if where else key
    if val is None:
        problems.add(name, "required")
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        problems.add(name, f"must be a number, got {val!r}")
        return None
    if not np.isfinite(val):
        problems.add(name, "must be finite")
        return None
    return float(val)


def _state_terms(spec, where, problems, J):
    out = {}
    if not isinstance(spec, dict):
        problems.add(where, "must be a table")
        return out
    for key, terms in spec.items():
        try:
            j = int(key)
        except ValueError:
            problems.add(f"{where}.{key}", "state keys must be integers")
            continue
        if not 0 <= j < J:
            problems.add(f"{where}.{key}", f"payments are specified on biometric states 0..{J - 1}")
            continue
        out[j] = terms
    return out


def _pair_terms(spec, where, problems):
    out = {}
    if not isinstance(spec, dict):
        problems.add(where, "must be a table")
        return out
    for key, terms in spec.items():
        pair = problems.guard(f"{where}.{key}", parse_pair, key)
        if pair is not None:
            out[key] = terms
    return out


def _build_payments(model, sojourn, transition, age, problems, where, premium=None,
                    nonnegative=False):
    soj = {}
    for j, terms in sojourn.items():
        f = problems.guard(f"{where}.sojourn.{j}", term_sum, terms, age)
        if f is not None:
            soj[j] = f
    tr = {}
    for key, terms in transition.items():
        f = problems.guard(f"{where}.transition.{key}", term_sum, terms, age)
        if f is not None:
            tr[parse_pair(key)] = f
    return problems.guard(where, PaymentSpec, model, soj, tr, premium=premium,
                          nonnegative=nonnegative)


def _check_payment_signs(spec: PaymentSpec, times, where, problems):
    for j in spec.sojourn:
        v = spec.sojourn[j](times)
        if not np.all(np.isfinite(v)):
            problems.add(f"{where}.sojourn.{j}", "not finite")
        elif spec.nonnegative and np.any(v < 0):
            problems.add(f"{where}.sojourn.{j}", "bonus payments must be nonnegative")
    for (j, k) in spec.transition:
        v = spec.transition[(j, k)](times)
        if not np.all(np.isfinite(v)):
            problems.add(f"{where}.transition.{j}-{k}", "not finite")
        elif spec.nonnegative and np.any(v < 0):
            problems.add(f"{where}.transition.{j}-{k}", "bonus payments must be nonnegative")


def _check_rates(rates: TransitionRateSet, times, where, problems):
    for (j, k) in sorted(rates.support):
        problems.guard(f"{where}.{j}-{k}", rates.rate, j, k, times)


def parse_config(raw: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    """Validate a configuration mapping and build the model objects."""
    problems = _Problems()
    if not isinstance(raw, Mapping):
        raise ConfigurationError("configuration must be a table")
    for key in sorted(set(raw) - set(_SECTIONS)):
        problems.add(key, "unknown section")
    prod = _section(raw, "product", problems)
    tech = _section(raw, "technical_basis", problems)
    mkt = _section(raw, "market_basis", problems)
    esg = _section(raw, "esg", problems)
    strat = _section(raw, "strategy", problems)
    runsec = raw.get("run", {})
    if not isinstance(runsec, dict):
        problems.add("run", "must be a table")
        runsec = {}
    for key in sorted(set(runsec) - _SECTIONS["run"]):
        problems.add(f"run.{key}", "unknown key")
    problems.raise_if_any()

    # product and state model
    J = prod.get("n_biometric")
    if not isinstance(J, int) or isinstance(J, bool) or J < 1:
        problems.add("product.n_biometric", "must be a positive integer")
        problems.raise_if_any()
    horizon = _float(prod, "horizon", problems, where="product")
    age = _float(prod, "age", problems, default=0.0, where="product")
    labels = tuple(prod.get("labels", ()))
    model = problems.guard("product", StateModel, J, int(prod.get("initial_state", 0)),
                           horizon if horizon is not None else 1.0, labels)
    problems.raise_if_any()

    # run settings
    run_kw = {k: v for k, v in runsec.items()}
    run = problems.guard("run", RunSettings, **run_kw)
    problems.raise_if_any()
    try:
        grid = TimeGrid(model.horizon, run.step)
    except ConfigurationError as exc:
        problems.add("run.step", str(exc))
        problems.raise_if_any()
    check_t = np.concatenate([grid.times[:-1] + 1e-9, grid.times[1:] - 1e-9])

    # technical basis
    tech_rates = _pair_terms(tech.get("rates", {}), "technical_basis.rates", problems)
    fns = problems.guard("technical_basis.rates", build_rate_functions, tech_rates, age)
    technical = None
    if fns is not None:
        rs = problems.guard("technical_basis.rates", TransitionRateSet, model, fns)
        interest = tech.get("interest")
        if isinstance(interest, (int, float)) and not isinstance(interest, bool):
            r_fn = TechnicalBasis.flat(float(interest), rs).interest if rs else None
        elif isinstance(interest, list):
            r_fn = problems.guard("technical_basis.interest", term_sum, interest, age)
        else:
            problems.add("technical_basis.interest", "must be a number or a list of terms")
            r_fn = None
        if rs is not None and r_fn is not None:
            technical = TechnicalBasis(r_fn, rs)
            _check_rates(rs, check_t, "technical_basis.rates", problems)
            problems.guard("technical_basis.rates", technical.check_mirror, check_t)
            bad = [(j, k) for (j, k) in rs.support
                   if (j == 0 and k in (model.J, model.free_entry))
                   or (j == model.free_entry and k == 2 * model.J + 1)]
            for j, k in bad:
                problems.add(f"technical_basis.rates.{j}-{k}",
                             "policyholder options carry no technical intensity")
            if not np.all(np.isfinite(r_fn(check_t))):
                problems.add("technical_basis.interest", "not finite")

    # market basis
    mkt_rates = _pair_terms(mkt.get("rates", {}), "market_basis.rates", problems)
    mfns = problems.guard("market_basis.rates", build_rate_functions, mkt_rates, age)
    market = None
    if mfns is not None:
        market = problems.guard("market_basis.rates", TransitionRateSet, model, mfns)
        if market is not None:
            _check_rates(market, check_t, "market_basis.rates", problems)

    # payments
    prem = prod.get("premium")
    premium, equivalence = None, False
    if prem is not None:
        if not isinstance(prem, dict):
            problems.add("product.premium", "must be a table")
        else:
            for key in sorted(set(prem) - _PREMIUM):
                problems.add(f"product.premium.{key}", "unknown key")
            rate = prem.get("rate")
            if rate == "equivalence":
                equivalence, rate = True, 0.0
            elif isinstance(rate, bool) or not isinstance(rate, (int, float)):
                problems.add("product.premium.rate", "must be a number or \"equivalence\"")
                rate = 0.0
            premium = problems.guard("product.premium", Premium, int(prem.get("state", 0)),
                                     float(rate), prem.get("start"), prem.get("end"))
    payments = _build_payments(
        model, _state_terms(prod.get("sojourn", {}), "product.sojourn", problems, model.J),
        _pair_terms(prod.get("transition", {}), "product.transition", problems),
        age, problems, "product", premium=premium)
    bonus_sec = prod.get("bonus", {})
    if not isinstance(bonus_sec, dict):
        problems.add("product.bonus", "must be a table")
        bonus_sec = {}
    for key in sorted(set(bonus_sec) - _BONUS):
        problems.add(f"product.bonus.{key}", "unknown key")
    bonus = _build_payments(
        model, _state_terms(bonus_sec.get("sojourn", {}), "product.bonus.sojourn", problems,
                            model.J),
        _pair_terms(bonus_sec.get("transition", {}), "product.bonus.transition", problems),
        age, problems, "product.bonus", nonnegative=True)
    if payments is not None:
        _check_payment_signs(payments, check_t, "product", problems)
    if bonus is not None:
        _check_payment_signs(bonus, check_t, "product.bonus", problems)
        if bonus.is_zero():
            problems.add("product.bonus", "the unit bonus stream must not be identically zero")

    # financial market
    vas = None
    vals = {k: _float(esg, k, problems, where="esg") for k in ("beta", "alpha", "sigma", "r0")}
    maturity = _float(esg, "maturity", problems, default=model.horizon, where="esg")
    if esg.get("sigma") is not None and vals["sigma"] is not None and vals["sigma"] < 0:
        problems.add("esg.sigma", "must be nonnegative")
    if vals["alpha"] is not None and vals["alpha"] <= 0:
        problems.add("esg.alpha", "must be positive")
    if all(v is not None for v in vals.values()) and maturity is not None:
        if maturity < model.horizon - 1e-12:
            problems.add("esg.maturity", "the bond must not mature before the contract horizon")
        vas = problems.guard("esg", VasicekParams, maturity=maturity, **vals)

    # strategy
    kappa = _float(strat, "kappa", problems, where="strategy")
    if kappa is not None and not 0.0 <= kappa <= 1.0:
        problems.add("strategy.kappa", "must lie in [0, 1]")
    u0 = _float(strat, "u0", problems, default=0.0, where="strategy")
    Q0 = _float(strat, "Q0", problems, default=0.0, where="strategy")
    problems.raise_if_any()
    return RunConfig(raw, model, technical, market, payments, bonus, vas, kappa, u0, Q0, run,
                     equivalence)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"configuration file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)


def example_config_path() -> Path:
    """Path of the shipped example configuration."""
    return Path(__file__).with_name("data") / "example.toml"
