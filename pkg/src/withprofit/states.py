"""State space with a premium-paying half, a free-policy copy and surrender states."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class StateModel:
    """Multi-state contract model on ``{0, ..., 2J+1}``.

    States ``0..J-1`` are the biometric premium-paying states (0 = active),
    ``J`` is surrender, ``J+1..2J`` are the free-policy copies of the
    biometric states and ``2J+1`` is surrender as a free policy.

    Parameters
    ----------
    n_biometric:
        ``J``, the number of biometric states.
    initial_state:
        ``z0``.
    horizon:
        Maximal contract time ``n`` in years.
    labels:
        Optional names of the biometric states.
    """

    n_biometric: int
    initial_state: int = 0
    horizon: float = 1.0
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_biometric < 1:
            raise ConfigurationError("at least one biometric state is required")
        if not 0 <= self.initial_state < self.n_states:
            raise ConfigurationError(f"initial state {self.initial_state} out of range")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if self.labels and len(self.labels) != self.n_biometric:
            raise ConfigurationError("need one label per biometric state")

    @property
    def J(self) -> int:
        return self.n_biometric

    @property
    def n_states(self) -> int:
        return 2 * self.J + 2

    @property
    def premium_states(self) -> range:
        return range(0, self.J + 1)

    @property
    def free_states(self) -> range:
        return range(self.J + 1, 2 * self.J + 2)

    @property
    def biometric_states(self) -> range:
        return range(0, self.J)

    @property
    def surrender_states(self) -> tuple[int, int]:
        return (self.J, 2 * self.J + 1)

    @property
    def free_entry(self) -> int:
        return self.J + 1

    def is_free(self, j: int) -> bool:
        return j > self.J

    def mirror(self, j: int) -> int:
        """``j'``: the premium-state counterpart of a free state."""
        return j - (self.J + 1) if j > self.J else j

    def free_copy(self, j: int) -> int:
        return j + self.J + 1

    def state_labels(self) -> list[str]:
        base = list(self.labels) or [str(j) for j in range(self.J)]
        return base + ["surrender"] + [f"{b} (free)" for b in base] + ["surrender (free)"]

    def allowed_pairs(self) -> set[tuple[int, int]]:
        """Transitions permitted by the topology."""
        J = self.J
        pairs = {(j, k) for j in range(J) for k in range(J) if j != k}
        pairs |= {(0, J), (0, J + 1)}
        pairs |= {(self.free_copy(j), self.free_copy(k)) for j, k in list(pairs) if k < J}
        pairs.add((J + 1, 2 * J + 1))
        return pairs

    def check_support(self, pairs) -> None:
        bad = sorted(set(pairs) - self.allowed_pairs())
        if bad:
            raise ConfigurationError(f"transitions outside the state topology: {bad}")
