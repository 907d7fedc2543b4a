"""Trajectories, discounted returns, lambda-returns and TD errors.

Discounts live on the transitions: ``next_discount`` is the factor applied to
the successor's value (and to everything after it), and is 0 exactly on the
transition that ends the episode. The return after termination is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, slots=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    next_discount: float

    def __post_init__(self):
        if not 0.0 <= self.next_discount <= 1.0:
            raise InvalidInputError(f"next_discount must lie in [0, 1], got {self.next_discount}")


@dataclass(frozen=True)
class Trajectory:
    """One episode. ``truncated`` marks an episode cut at ``max_steps``.

    A complete episode ends with ``next_discount == 0``; a truncated one
    keeps the last discount nonzero.
    """

    transitions: tuple[Transition, ...]
    episode_id: int = 0
    truncated: bool = False

    def __post_init__(self):
        ts = tuple(self.transitions)
        object.__setattr__(self, "transitions", ts)
        if not ts:
            raise InvalidInputError("trajectory must contain at least one transition")
        for i, (a, b) in enumerate(zip(ts[:-1], ts[1:])):
            if a.next_discount == 0.0:
                raise InvalidInputError(f"transition {i} terminates but is not last")
            if a.next_state != b.state:
                raise InvalidInputError(
                    f"transition {i} ends in state {a.next_state} but transition {i + 1} "
                    f"starts in {b.state}"
                )
        if not self.truncated and ts[-1].next_discount != 0.0:
            raise InvalidInputError("last transition of a complete episode must have next_discount 0")

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def states(self) -> list[int]:
        """S_0 .. S_T (the final entry is the terminal or truncation state)."""
        return [t.state for t in self.transitions] + [self.transitions[-1].next_state]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=np.float64)

    @property
    def discounts(self) -> np.ndarray:
        return np.array([t.next_discount for t in self.transitions], dtype=np.float64)


def make_trajectory(
    states: Sequence[int],
    rewards: Sequence[float],
    gamma: float = 1.0,
    *,
    terminal: bool = True,
    episode_id: int = 0,
) -> Trajectory:
    """Build a trajectory from ``len(rewards) + 1`` states and a constant discount."""
    if len(states) != len(rewards) + 1:
        raise InvalidInputError("need exactly one more state than rewards")
    n = len(rewards)
    transitions = []
    for i in range(n):
        disc = 0.0 if (terminal and i == n - 1) else float(gamma)
        transitions.append(Transition(int(states[i]), 0, float(rewards[i]), int(states[i + 1]), disc))
    return Trajectory(tuple(transitions), episode_id=episode_id, truncated=not terminal)


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must lie in [0, 1], got {self.gamma}")


def _step_discounts(trajectory: Trajectory, discount: DiscountSpec | None) -> np.ndarray:
    if discount is None:
        return trajectory.discounts
    g = np.full(len(trajectory), discount.gamma, dtype=np.float64)
    if not trajectory.truncated:
        g[-1] = 0.0
    return g


def compute_return(trajectory: Trajectory, discount: DiscountSpec | None = None) -> np.ndarray:
    """Discounted return G_t for every step, via G_t = R_{t+1} + g_{t+1} G_{t+1}.

    If ``discount`` is given it replaces the per-transition discounts
    (``gamma`` inside the episode, 0 on the terminating transition).
    """
    if not isinstance(trajectory, Trajectory) or len(trajectory) == 0:
        raise InvalidInputError("compute_return needs a non-empty Trajectory")
    r = trajectory.rewards
    g = _step_discounts(trajectory, discount)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + g[t] * acc
        out[t] = acc
    return out


def compute_lambda_return(
    trajectory: Trajectory,
    values: Sequence[float],
    lam: float,
    discount: DiscountSpec | None = None,
) -> np.ndarray:
    """Lambda-returns G^lam_t = R_{t+1} + g_{t+1}((1-lam) v(S_{t+1}) + lam G^lam_{t+1}).

    ``values`` holds v(S_0) .. v(S_T); the last entry is the terminal (or
    truncation) value. For a truncated episode the recursion bootstraps
    fully on v(S_T).
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    v = np.asarray(values, dtype=np.float64)
    n = len(trajectory)
    if v.shape != (n + 1,):
        raise InvalidInputError(f"expected {n + 1} values, got {v.shape}")
    r = trajectory.rewards
    g = _step_discounts(trajectory, discount)
    out = np.empty(n, dtype=np.float64)
    acc = v[n]
    for t in range(n - 1, -1, -1):
        acc = r[t] + g[t] * ((1.0 - lam) * v[t + 1] + lam * acc)
        out[t] = acc
    return out


def td_error(reward: float, next_discount: float, v_next: float, v_cur: float) -> float:
    return reward + next_discount * v_next - v_cur


@dataclass(frozen=True)
class RngStream:
    """Seeded random stream.

    The generator is numpy's PCG64 seeded from ``SeedSequence([seed, stream_id])``;
    the pair fixes the sample sequence on every platform.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mask = (1 << 64) - 1
        ss = np.random.SeedSequence([int(self.seed) & mask, int(self.stream_id) & mask])
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self) -> float:
        return float(self._gen.random())

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)
