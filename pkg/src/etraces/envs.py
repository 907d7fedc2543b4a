"""Benchmark environments: the open grid and the multi-chain.

Each environment is a finite Markov reward process (an MDP with its fixed
behaviour policy folded in). Non-terminal states are ``0 .. num_states-1``
and the absorbing terminal sink is ``num_states``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidInputError
from .mdp import DiscountSpec, RngStream, Trajectory, Transition

_TOL = 1e-12


@dataclass(frozen=True)
class RewardDist:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @staticmethod
    def constant(value: float) -> "RewardDist":
        return RewardDist((float(value),), (1.0,))


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """Exact model plus sampler for a finite episodic reward process.

    ``transition`` has shape ``(num_states, num_states + 1)``; the final
    column is the probability of terminating. ``rewards`` maps each
    ``(s, s_next)`` pair with positive probability to its reward distribution.
    """

    name: str
    num_states: int
    start_distribution: np.ndarray
    transition: np.ndarray
    rewards: dict[tuple[int, int], RewardDist]
    discount: DiscountSpec = field(default_factory=DiscountSpec)
    grid_shape: tuple[int, int] | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.num_states
        p = np.asarray(self.transition, dtype=np.float64)
        mu = np.asarray(self.start_distribution, dtype=np.float64)
        if p.shape != (n, n + 1):
            raise InvalidInputError(f"transition must have shape {(n, n + 1)}, got {p.shape}")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > _TOL:
            raise InvalidInputError("transition rows must be non-negative and sum to 1")
        if mu.shape != (n,) or (mu < 0).any() or abs(mu.sum() - 1.0) > _TOL:
            raise InvalidInputError("start_distribution must be a probability vector over states")
        for (s, s2), dist in self.rewards.items():
            if len(dist.values) != len(dist.probs) or abs(sum(dist.probs) - 1.0) > _TOL:
                raise InvalidInputError(f"reward distribution for {(s, s2)} must sum to 1")
        for s, s2 in zip(*np.nonzero(p)):
            if (int(s), int(s2)) not in self.rewards:
                raise InvalidInputError(f"missing reward distribution for transition {(s, s2)}")
        p.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "start_distribution", mu)

    @property
    def terminal(self) -> int:
        return self.num_states

    @property
    def gamma(self) -> float:
        return self.discount.gamma

    def next_discount(self, next_state: int) -> float:
        return 0.0 if next_state == self.num_states else self.discount.gamma

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """r(s) = sum_s' P(s, s') E[R | s, s']."""
        r = np.zeros(self.num_states)
        for (s, s2), dist in self.rewards.items():
            r[s] += self.transition[s, s2] * dist.mean
        return r

    @cached_property
    def discounted_transition(self) -> np.ndarray:
        """gamma * P restricted to non-terminal successors (terminal discount is 0)."""
        return self.discount.gamma * self.transition[:, : self.num_states]

    @cached_property
    def _tables(self):
        succ, cums, rew = [], [], {}
        for s in range(self.num_states):
            nz = np.flatnonzero(self.transition[s])
            succ.append(nz)
            cums.append(np.cumsum(self.transition[s, nz]))
        for key, dist in self.rewards.items():
            vals = np.array([v for v, q in zip(dist.values, dist.probs) if q > 0])
            ps = np.array([q for q in dist.probs if q > 0])
            rew[key] = (vals, np.cumsum(ps))
        start = np.flatnonzero(self.start_distribution)
        return succ, cums, rew, (start, np.cumsum(self.start_distribution[start]))

    @cached_property
    def default_max_steps(self) -> int:
        """Ten times the longest shortest path from a start state to termination."""
        n = self.num_states
        dist = np.full(n + 1, -1)
        dist[n] = 0
        pred = [np.flatnonzero(self.transition[:, s2]) for s2 in range(n + 1)]
        queue = deque([n])
        while queue:
            s2 = queue.popleft()
            for s in pred[s2]:
                if dist[s] < 0:
                    dist[s] = dist[s2] + 1
                    queue.append(s)
        starts = np.flatnonzero(self.start_distribution)
        longest = int(max(dist[s] for s in starts))
        return 10 * max(longest, 1)

    def coords(self, state: int) -> tuple[int, int]:
        if self.grid_shape is None:
            raise InvalidInputError(f"{self.name} is not a grid")
        return divmod(state, self.grid_shape[1])


def _draw(values: np.ndarray, cum: np.ndarray, rng: RngStream):
    if len(values) == 1:
        return values[0]
    i = int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right"))
    return values[min(i, len(values) - 1)]


def sample_episode(env: EnvSpec, rng: RngStream, max_steps: int | None = None, episode_id: int = 0) -> Trajectory:
    """Draw one episode from the model.

    Deterministic outcomes consume no random numbers. Episodes longer than
    ``max_steps`` are cut and returned with ``truncated=True``.
    """
    if max_steps is None:
        max_steps = env.default_max_steps
    if max_steps < 1:
        raise InvalidInputError("max_steps must be >= 1")
    succ, cums, rew, (start_states, start_cum) = env._tables
    s = int(_draw(start_states, start_cum, rng))
    out = []
    term = env.terminal
    for _ in range(max_steps):
        nz = succ[s]
        if len(nz) == 1:
            a = 0
        else:
            a = int(np.searchsorted(cums[s], rng.uniform() * cums[s][-1], side="right"))
            a = min(a, len(nz) - 1)
        s2 = int(nz[a])
        vals, rcum = rew[(s, s2)]
        r = float(_draw(vals, rcum, rng))
        out.append(Transition(s, a, r, s2, env.next_discount(s2)))
        if s2 == term:
            return Trajectory(tuple(out), episode_id=episode_id)
        s = s2
    return Trajectory(tuple(out), episode_id=episode_id, truncated=True)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature vectors for states ``0 .. num_states`` (the terminal row is zero)."""

    matrix: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.matrix, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidInputError("feature matrix must be 2-D")
        if np.any(x[-1] != 0):
            raise InvalidInputError("terminal state must map to the zero vector")
        x.setflags(write=False)
        object.__setattr__(self, "matrix", x)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0] - 1

    def __call__(self, state: int) -> np.ndarray:
        return self.matrix[state]

    @cached_property
    def sparse_rows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per state, the nonzero indices and their values."""
        rows = []
        for x in self.matrix:
            idx = np.flatnonzero(x)
            rows.append((idx, x[idx].copy()))
        return rows

    @cached_property
    def is_one_hot(self) -> bool:
        n = self.num_states
        return self.dimension == n and np.array_equal(self.matrix[:n], np.eye(n))


# ---------------------------------------------------------------------------
# open grid


@dataclass(frozen=True)
class GridWorldParams:
    width: int = 10
    height: int = 10
    success_probability: float = 0.2
    gamma: float = 1.0

    def __post_init__(self):
        # A 2x1 strip is the smallest grid with a move in it.
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise InvalidInputError("grid needs at least two cells")
        if not 0.0 <= self.success_probability <= 1.0:
            raise InvalidInputError("success_probability must lie in [0, 1]")


def build_open_grid(params: GridWorldParams) -> EnvSpec:
    """Random walk right/down from the top-left cell; any action in the
    bottom-right cell terminates with +1 w.p. ``success_probability``."""
    w, h = params.width, params.height
    n = w * h
    term = n
    p = np.zeros((n, n + 1))
    rewards: dict[tuple[int, int], RewardDist] = {}
    zero = RewardDist.constant(0.0)
    for row in range(h):
        for col in range(w):
            s = row * w + col
            moves = []
            if col < w - 1:
                moves.append(s + 1)
            if row < h - 1:
                moves.append(s + w)
            if not moves:
                p[s, term] = 1.0
                q = params.success_probability
                rewards[(s, term)] = RewardDist((1.0, 0.0), (q, 1.0 - q))
                continue
            for s2 in moves:
                p[s, s2] = 1.0 / len(moves)
                rewards[(s, s2)] = zero
    mu = np.zeros(n)
    mu[0] = 1.0
    labels = tuple(f"({r},{c})" for r in range(h) for c in range(w))
    return EnvSpec("open_grid", n, mu, p, rewards, DiscountSpec(params.gamma), grid_shape=(h, w), labels=labels)


# ---------------------------------------------------------------------------
# multi-chain


@dataclass(frozen=True)
class MultiChainParams:
    num_chains: int = 4
    chain_length: int = 4
    terminal_plus_probability: float = 0.9
    gamma: float = 1.0

    def __post_init__(self):
        if self.num_chains < 1 or self.chain_length < 1:
            raise InvalidInputError("num_chains and chain_length must be >= 1")
        if not 0.0 <= self.terminal_plus_probability <= 1.0:
            raise InvalidInputError("terminal_plus_probability must lie in [0, 1]")

    @property
    def num_states(self) -> int:
        return 2 + self.num_chains * self.chain_length

    @property
    def start_state(self) -> int:
        return 0

    @property
    def bottleneck_state(self) -> int:
        return 1 + self.num_chains * self.chain_length

    def chain_state(self, branch: int, progress: int) -> int:
        return 1 + branch * self.chain_length + progress


def build_multi_chain(params: MultiChainParams) -> EnvSpec:
    """Start -> one of m chains (uniform) -> n chain states -> bottleneck -> terminal.

    Every reward is +1 except the terminating one, which is +1 w.p.
    ``terminal_plus_probability`` and -1 otherwise.
    """
    m, length = params.num_chains, params.chain_length
    n = params.num_states
    term = n
    bott = params.bottleneck_state
    one = RewardDist.constant(1.0)
    p = np.zeros((n, n + 1))
    rewards: dict[tuple[int, int], RewardDist] = {}
    for b in range(m):
        head = params.chain_state(b, 0)
        p[0, head] = 1.0 / m
        rewards[(0, head)] = one
        for i in range(length):
            s = params.chain_state(b, i)
            s2 = params.chain_state(b, i + 1) if i < length - 1 else bott
            p[s, s2] = 1.0
            rewards[(s, s2)] = one
    q = params.terminal_plus_probability
    p[bott, term] = 1.0
    rewards[(bott, term)] = RewardDist((1.0, -1.0), (q, 1.0 - q))
    mu = np.zeros(n)
    mu[0] = 1.0
    labels = ("start",) + tuple(f"chain{b}[{i}]" for b in range(m) for i in range(length)) + ("bottleneck",)
    return EnvSpec("multi_chain", n, mu, p, rewards, DiscountSpec(params.gamma), labels=labels)


# ---------------------------------------------------------------------------
# features


def tabular_features(env: EnvSpec) -> FeatureMap:
    n = env.num_states
    return FeatureMap(np.vstack([np.eye(n), np.zeros((1, n))]))


def multichain_features(params: MultiChainParams) -> FeatureMap:
    """Branch one-hot, progress one-hot, bias, start bit, bottleneck bit.

    The start/bottleneck bits are linearly dependent with the bias and the
    branch block; the redundancy is deliberate.
    """
    m, length = params.num_chains, params.chain_length
    bias, start_bit, bott_bit = m + length, m + length + 1, m + length + 2
    x = np.zeros((params.num_states + 1, m + length + 3))
    x[params.start_state, [bias, start_bit]] = 1.0
    x[params.bottleneck_state, [bias, bott_bit]] = 1.0
    for b in range(m):
        for i in range(length):
            x[params.chain_state(b, i), [b, m + i, bias]] = 1.0
    return FeatureMap(x)
