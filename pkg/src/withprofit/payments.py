"""Payment functions of the contract and their expected rates per state.

Payments are specified on the premium-paying biometric states only.  The
surrender payment and the free-policy payments are derived from them (the
surrender payment is the technical reserve, free-policy payments are the
benefit parts of the premium-state payments), see :func:`state_rates`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, NumericalInputError
from .states import StateModel


@dataclass(frozen=True)
class Premium:
    """Level premium ``rate`` paid in ``state`` for ``start < t < end``."""

    state: int
    rate: float
    start: float | None = None
    end: float | None = None

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        on = np.ones_like(t, dtype=bool)
        if self.start is not None:
            on &= t > self.start
        if self.end is not None:
            on &= t < self.end
        return np.where(on, self.rate, 0.0)


def _positive(f: Callable) -> Callable:
    return lambda t: np.maximum(f(t), 0.0)


class PaymentSpec:
    """Sojourn rates ``b_j`` and transition payments ``b_jk`` on biometric states.

    Parameters
    ----------
    model:
        The state model.  Keys must be biometric states ``0..J-1`` (or pairs
        of them); surrender and free-policy payments are derived elsewhere.
    sojourn, transition:
        Vectorised callables of contract time.
    premium:
        Optional premium, entering the sojourn rate of its state with a
        negative sign.  Kept separate so it can be calibrated.
    nonnegative:
        Require all payments to be nonnegative (unit bonus streams).
    """

    def __init__(self, model: StateModel, sojourn: Mapping[int, Callable] | None = None,
                 transition: Mapping[tuple[int, int], Callable] | None = None,
                 premium: Premium | None = None, nonnegative: bool = False):
        self.model = model
        self.sojourn = dict(sojourn or {})
        self.transition = dict(transition or {})
        self.premium = premium
        self.nonnegative = nonnegative
        J = model.J
        for j in self.sojourn:
            if not 0 <= j < J:
                raise ConfigurationError(
                    f"sojourn payment in state {j}: only biometric states 0..{J - 1} carry "
                    "stipulated payments (surrender states pay nothing while occupied)"
                )
        for j, k in self.transition:
            if not (0 <= j < J and 0 <= k < J and j != k):
                raise ConfigurationError(f"transition payment {j}->{k} outside the biometric states")
        if premium is not None:
            if not 0 <= premium.state < J:
                raise ConfigurationError(f"premium state {premium.state} is not biometric")
            if nonnegative:
                raise ConfigurationError("a nonnegative payment stream cannot carry a premium")

    def _cut(self, t, values):
        return np.where(np.asarray(t) <= self.model.horizon, values, 0.0)

    def sojourn_rate(self, j: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        if j in self.sojourn:
            out = out + self.sojourn[j](t)
        if self.premium is not None and self.premium.state == j:
            out = out - self.premium(t)
        out = self._cut(t, out)
        self._check(out, f"sojourn payment in state {j}")
        return out

    def lump(self, j: int, k: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        f = self.transition.get((j, k))
        out = np.zeros_like(t) if f is None else self._cut(t, f(t))
        self._check(out, f"transition payment {j}->{k}")
        return out

    def _check(self, out, what):
        if not np.all(np.isfinite(out)):
            raise NumericalInputError(f"{what} is not finite")
        if self.nonnegative and np.any(out < 0):
            raise NumericalInputError(f"{what} is negative in a benefit-only stream")

    def with_premium_rate(self, rate: float) -> "PaymentSpec":
        if self.premium is None:
            raise ConfigurationError("the payment streams have no premium")
        p = Premium(self.premium.state, float(rate), self.premium.start, self.premium.end)
        return PaymentSpec(self.model, self.sojourn, self.transition, p, self.nonnegative)

    def benefits(self) -> "PaymentSpec":
        """Benefit part: positive parts of all payments, premium removed."""
        soj = {j: _positive(lambda t, j=j: self.sojourn_rate(j, t))
               for j in set(self.sojourn) | ({self.premium.state} if self.premium else set())}
        tr = {jk: _positive(lambda t, jk=jk: self.lump(*jk, t)) for jk in self.transition}
        return PaymentSpec(self.model, soj, tr, None, nonnegative=True)

    def is_zero(self) -> bool:
        return not self.sojourn and not self.transition and self.premium is None


def state_rates(payments: PaymentSpec, rates, t, *, surrender: Callable | None = None,
                free: bool = True, free_positive: bool = True) -> np.ndarray:
    """Expected payment rate ``b_j(t) + sum_k b_jk(t) mu_jk(t)`` for every state.

    Returns an array of shape ``t.shape + (S,)``.  Premium states use the
    stipulated payments plus the surrender lump ``surrender(t)`` on ``0 -> J``.
    With ``free=True`` the free-policy states receive the mirrored payments,
    positive parts only when ``free_positive`` (the free-policy factor is
    applied by the caller through rho-modified probabilities).
    """
    model = payments.model
    J = model.J
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (model.n_states,))
    pos = (lambda x: np.maximum(x, 0.0)) if free_positive else (lambda x: x)
    lumps = {jk: payments.lump(*jk, t) for jk in payments.transition}
    for j in model.biometric_states:
        b = payments.sojourn_rate(j, t)
        out[..., j] = b
        if free:
            out[..., model.free_copy(j)] = pos(b)
    for (j, k), b in lumps.items():
        out[..., j] += b * rates.rate(j, k, t)
        if free:
            fj, fk = model.free_copy(j), model.free_copy(k)
            out[..., fj] += pos(b) * rates.rate(fj, fk, t)
    if surrender is not None:
        s = np.where(t <= model.horizon, surrender(t), 0.0)
        out[..., 0] += s * rates.rate(0, J, t)
        if free:
            out[..., J + 1] += pos(s) * rates.rate(J + 1, 2 * J + 1, t)
    return out


def technical_rates(payments: PaymentSpec, rates, t) -> np.ndarray:
    """Payment rates on the biometric sub-topology, shape ``t.shape + (J,)``."""
    return state_rates(payments, rates, t, free=False)[..., : payments.model.J]
