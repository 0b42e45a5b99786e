"""Parametric transition rates and the bases built from them.

A rate is a sum of terms.  Each term is one of a few parametric families,
optionally switched on only inside a window ``start < t < end`` of contract
time.  Age-based families use ``age = age0 + t``.

========================  ==========================================
family                    value
========================  ==========================================
``constant``              ``a``
``gompertz_makeham``      ``a + 10 ** (b + c * age - 10)``
``exponential``           ``a * exp(b * age)``
``linear_time``           ``a + b * t``
``ref``                   ``factor * (rate of pair`` ``rate``\\ ``)``
========================  ==========================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, NumericalInputError
from .states import StateModel

_FAMILY_PARAMS = {
    "constant": ("a",),
    "gompertz_makeham": ("a", "b", "c"),
    "exponential": ("a", "b"),
    "linear_time": ("a", "b"),
    "ref": ("rate",),
}


def parse_pair(key) -> tuple[int, int]:
    if isinstance(key, tuple):
        return int(key[0]), int(key[1])
    try:
        j, k = str(key).split("-")
        return int(j), int(k)
    except ValueError:
        raise ConfigurationError(f"transition key {key!r} is not of the form 'j-k'") from None


@dataclass(frozen=True)
class RateTerm:
    family: str
    params: Mapping[str, float | str] = field(default_factory=dict)
    start: float | None = None
    end: float | None = None
    factor: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILY_PARAMS:
            raise ConfigurationError(
                f"unknown rate family {self.family!r}; known: {sorted(_FAMILY_PARAMS)}"
            )
        missing = [p for p in _FAMILY_PARAMS[self.family] if p not in self.params]
        if missing:
            raise ConfigurationError(f"family {self.family!r} is missing parameters {missing}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RateTerm":
        d = dict(d)
        family = d.pop("family", None)
        if family is None:
            raise ConfigurationError(f"rate term {d} has no 'family'")
        start = d.pop("start", None)
        end = d.pop("end", None)
        factor = float(d.pop("factor", 1.0))
        allowed = set(_FAMILY_PARAMS.get(family, ()))
        extra = set(d) - allowed
        if extra:
            raise ConfigurationError(f"unexpected keys {sorted(extra)} in {family!r} term")
        return cls(family, d, start, end, factor)

    def window(self, t: np.ndarray) -> np.ndarray:
        mask = np.ones_like(t, dtype=bool)
        if self.start is not None:
            mask &= t > self.start
        if self.end is not None:
            mask &= t < self.end
        return mask

    def build(self, age0: float, resolve: Callable[[str], Callable]) -> Callable:
        p = self.params
        fam = self.family
        if fam == "constant":
            a = float(p["a"])
            base = lambda t: np.full_like(t, a)  # noqa: E731
        elif fam == "gompertz_makeham":
            a, b, c = float(p["a"]), float(p["b"]), float(p["c"])
            base = lambda t: a + 10.0 ** (b + c * (age0 + t) - 10.0)  # noqa: E731
        elif fam == "exponential":
            a, b = float(p["a"]), float(p["b"])
            base = lambda t: a * np.exp(b * (age0 + t))  # noqa: E731
        elif fam == "linear_time":
            a, b = float(p["a"]), float(p["b"])
            base = lambda t: a + b * t  # noqa: E731
        else:
            base = resolve(str(p["rate"]))
        factor = self.factor

        def term(t):
            t = np.asarray(t, dtype=float)
            return np.where(self.window(t), factor * base(t), 0.0)

        return term


def term_sum(terms, age0: float, resolve: Callable[[str], Callable] | None = None) -> Callable:
    """Vectorised sum of a list of terms (dicts or :class:`RateTerm`)."""
    terms = [t if isinstance(t, RateTerm) else RateTerm.from_dict(t) for t in terms]

    def no_refs(key):
        raise ConfigurationError(f"'ref' to {key!r} is not available here")

    fns = [t.build(age0, resolve or no_refs) for t in terms]

    def total(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for f in fns:
            out = out + f(t)
        return out

    return total


def build_rate_functions(
    spec: Mapping[str, list], age0: float
) -> dict[tuple[int, int], Callable]:
    """Turn ``{"j-k": [term, ...]}`` into vectorised callables, resolving refs."""
    terms = {parse_pair(k): [t if isinstance(t, RateTerm) else RateTerm.from_dict(t) for t in v]
             for k, v in spec.items()}
    built: dict[tuple[int, int], Callable] = {}
    visiting: set[tuple[int, int]] = set()

    def resolve(key: str) -> Callable:
        pair = parse_pair(key)
        if pair not in terms:
            raise ConfigurationError(f"'ref' to undefined rate {key!r}")
        return get(pair)

    def get(pair):
        if pair in built:
            return built[pair]
        if pair in visiting:
            raise ConfigurationError(f"cyclic 'ref' involving rate {pair}")
        visiting.add(pair)
        fns = [t.build(age0, resolve) for t in terms[pair]]
        visiting.discard(pair)

        def rate(t, fns=fns):
            t = np.asarray(t, dtype=float)
            out = np.zeros_like(t)
            for f in fns:
                out = out + f(t)
            return out

        built[pair] = rate
        return rate

    for pair in terms:
        get(pair)
    return built


class TransitionRateSet:
    """Transition rates ``mu_jk(t)`` on the full state space of ``model``.

    ``functions`` maps ordered pairs to vectorised callables of time.  With
    ``mirror_free=True`` every biometric pair ``(j, k)`` (and surrender
    ``(0, J)``) is copied onto the free-policy half unless the free pair is
    given explicitly.
    """

    def __init__(self, model: StateModel, functions: Mapping[tuple[int, int], Callable],
                 mirror_free: bool = True):
        self.model = model
        funcs = dict(functions)
        model.check_support(funcs)
        if mirror_free:
            J = model.J
            for (j, k), f in list(funcs.items()):
                if j < J and k <= J and not (j == 0 and k == J + 1):
                    target = (model.free_copy(j), model.free_copy(k))
                    funcs.setdefault(target, f)
        self._funcs = funcs

    @property
    def support(self) -> frozenset[tuple[int, int]]:
        return frozenset(self._funcs)

    def function(self, j: int, k: int) -> Callable | None:
        return self._funcs.get((j, k))

    def rate(self, j: int, k: int, t) -> np.ndarray:
        f = self._funcs.get((j, k))
        t = np.asarray(t, dtype=float)
        if f is None:
            return np.zeros_like(t)
        out = f(t)
        if not np.all(np.isfinite(out)):
            raise NumericalInputError(f"rate {j}->{k} is not finite")
        if np.any(out < 0):
            raise NumericalInputError(f"rate {j}->{k} is negative")
        return out

    def matrix(self, t, pairs=None) -> np.ndarray:
        """Rates as an array of shape ``t.shape + (S, S)`` (zero diagonal)."""
        t = np.asarray(t, dtype=float)
        S = self.model.n_states
        out = np.zeros(t.shape + (S, S))
        for j, k in (self._funcs if pairs is None else pairs):
            if (j, k) in self._funcs:
                out[..., j, k] = self.rate(j, k, t)
        return out

    def generator(self, t, pairs=None) -> np.ndarray:
        """Intensity matrix (rows sum to zero)."""
        mu = self.matrix(t, pairs)
        idx = np.arange(mu.shape[-1])
        mu[..., idx, idx] = -mu.sum(axis=-1)
        return mu

    def biometric_pairs(self) -> list[tuple[int, int]]:
        J = self.model.J
        return [(j, k) for (j, k) in self._funcs if j < J and k < J]


@dataclass(frozen=True)
class TechnicalBasis:
    """First-order basis: deterministic interest ``r_star`` and rates ``mu_star``."""

    interest: Callable
    rates: TransitionRateSet

    @classmethod
    def flat(cls, r_star: float, rates: TransitionRateSet) -> "TechnicalBasis":
        return cls(lambda t: np.full_like(np.asarray(t, dtype=float), r_star), rates)

    def check_mirror(self, times: np.ndarray) -> None:
        """Free-state technical rates must equal their premium-state originals."""
        model = self.rates.model
        for (j, k) in self.rates.support:
            if model.is_free(j):
                jj, kk = model.mirror(j), model.mirror(k)
                a = self.rates.rate(j, k, times)
                b = self.rates.rate(jj, kk, times)
                if not np.allclose(a, b, rtol=1e-12, atol=1e-15):
                    raise ConfigurationError(
                        f"technical rate {j}->{k} does not mirror {jj}->{kk}"
                    )
        for (j, k) in self.rates.support:
            if not model.is_free(j) and j < model.J and k <= model.J:
                fj, fk = model.free_copy(j), model.free_copy(k)
                if (fj, fk) not in self.rates.support:
                    raise ConfigurationError(
                        f"technical rate {j}->{k} has no free-state mirror {fj}->{fk}"
                    )
