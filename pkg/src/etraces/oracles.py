"""Exact reference computations.

State values come from a direct linear solve. Everything involving traces is
computed by enumerating trajectory prefixes from the start distribution, so
it only applies to episodic environments of desk size (both packaged
environments are acyclic). Expectations "at state s" default to the
episodic on-policy visitation weighting: every visit to ``s`` at any time
step counts, weighted by its probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec, FeatureMap
from .errors import EnumerationBudgetError, InvalidInputError, NumericFailureError
from .learners import ValueFn
from .mdp import Trajectory, compute_lambda_return

ENUMERATION_BUDGET = 10**6
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ExactValues:
    v: np.ndarray
    bellman_residual: float


def _solve(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericFailureError(f"{what}: singular system (condition number {cond:.3g})")
    return np.linalg.solve(a, b)


def exact_state_values(env: EnvSpec) -> ExactValues:
    """Solve ``v = r + gamma P v`` over non-terminal states."""
    n = env.num_states
    pg = env.discounted_transition
    r = env.expected_reward
    v = _solve(np.eye(n) - pg, r, "state values")
    resid = float(np.max(np.abs(r + pg @ v - v))) if n else 0.0
    return ExactValues(v, resid)


def expected_visits(env: EnvSpec) -> np.ndarray:
    """Expected number of visits per non-terminal state in one episode."""
    n = env.num_states
    p = env.transition[:, :n]
    return _solve((np.eye(n) - p).T, env.start_distribution, "visit counts")


# ---------------------------------------------------------------------------
# prefix enumeration


@dataclass(frozen=True)
class Prefix:
    states: tuple[int, ...]
    prob: float
    trace: np.ndarray


def enumerate_prefixes(
    env: EnvSpec,
    features: FeatureMap,
    lam: float,
    gamma: float | None = None,
    budget: int = ENUMERATION_BUDGET,
) -> list[Prefix]:
    """All state prefixes ``S_0 .. S_t`` (ending in a non-terminal state) with
    their probabilities and accumulated traces ``e_t``."""
    g = env.gamma if gamma is None else gamma
    x = features.matrix
    out: list[Prefix] = []
    stack = []
    for s in np.flatnonzero(env.start_distribution):
        stack.append(((int(s),), float(env.start_distribution[s]), x[s].copy()))
    while stack:
        states, prob, e = stack.pop()
        out.append(Prefix(states, prob, e))
        if len(out) > budget:
            raise EnumerationBudgetError(budget)
        s = states[-1]
        for s2 in np.flatnonzero(env.transition[s, : env.num_states]):
            stack.append((states + (int(s2),), prob * env.transition[s, s2], g * lam * e + x[s2]))
    out.sort(key=lambda p: p.states)
    return out


@dataclass(frozen=True)
class EnumeratedDistribution:
    """Prefixes reaching ``state`` (at ``time``, or at any time if ``time`` is None)
    with probabilities normalized by the probability (or expected count) of that event."""

    state: int
    time: int | None
    prefixes: tuple[Prefix, ...]
    marginal: float

    @property
    def probs(self) -> np.ndarray:
        return np.array([p.prob for p in self.prefixes]) / self.marginal

    @property
    def traces(self) -> np.ndarray:
        return np.array([p.trace for p in self.prefixes])

    def mean_trace(self) -> np.ndarray:
        return self.probs @ self.traces


def conditional_prefixes(
    env: EnvSpec,
    features: FeatureMap,
    lam: float,
    state: int,
    time: int | None = None,
    gamma: float | None = None,
    prefixes: list[Prefix] | None = None,
) -> EnumeratedDistribution:
    if not 0 <= state < env.num_states:
        raise InvalidInputError(f"state {state} is not a non-terminal state")
    if prefixes is None:
        prefixes = enumerate_prefixes(env, features, lam, gamma)
    hits = tuple(
        p for p in prefixes if p.states[-1] == state and (time is None or len(p.states) - 1 == time)
    )
    marginal = float(sum(p.prob for p in hits))
    if marginal <= 0:
        raise InvalidInputError(f"state {state} is unreachable" + ("" if time is None else f" at time {time}"))
    return EnumeratedDistribution(state, time, hits, marginal)


def exact_expected_trace(
    env: EnvSpec,
    features: FeatureMap,
    lam: float,
    state: int,
    time: int | None = None,
    gamma: float | None = None,
) -> np.ndarray:
    """``E[e_t | S_t = state]``; ``time=None`` averages over all visits."""
    return conditional_prefixes(env, features, lam, state, time, gamma).mean_trace()


def predecessor_features(
    env: EnvSpec, features: FeatureMap, lam: float, gamma: float | None = None
) -> np.ndarray:
    """Expected trace of every non-terminal state, one row per state.

    With linear features these are predecessor features: discounted
    (by ``gamma * lam``) expectations of previously observed features.
    Unreachable states get the zero vector.
    """
    prefixes = enumerate_prefixes(env, features, lam, gamma)
    num = np.zeros((env.num_states, features.dimension))
    den = np.zeros(env.num_states)
    for p in prefixes:
        s = p.states[-1]
        num[s] += p.prob * p.trace
        den[s] += p.prob
    reached = den > 0
    num[reached] /= den[reached, None]
    return num


def expected_mixture_trace(
    env: EnvSpec, features: FeatureMap, lam: float, eta: float, gamma: float | None = None
) -> np.ndarray:
    """``E[y_t | S_t = s]`` per state for the mixture trace driven by the exact expected trace.

    Along every prefix ``y_t = (1 - eta) z(S_t) + eta (gamma lam y_{t-1} + x(S_t))``
    with ``z`` from :func:`predecessor_features`; the result is averaged with
    the same visitation weights as the expected trace itself.
    """
    if not 0.0 <= eta <= 1.0:
        raise InvalidInputError("eta must lie in [0, 1]")
    g = env.gamma if gamma is None else gamma
    z = predecessor_features(env, features, lam, gamma)
    x = features.matrix
    num = np.zeros((env.num_states, features.dimension))
    den = np.zeros(env.num_states)
    stack = []
    for s in np.flatnonzero(env.start_distribution):
        s = int(s)
        stack.append((s, float(env.start_distribution[s]), (1.0 - eta) * z[s] + eta * x[s]))
    count = 0
    while stack:
        s, prob, y = stack.pop()
        count += 1
        if count > ENUMERATION_BUDGET:
            raise EnumerationBudgetError(ENUMERATION_BUDGET)
        num[s] += prob * y
        den[s] += prob
        for s2 in np.flatnonzero(env.transition[s, : env.num_states]):
            s2 = int(s2)
            y2 = (1.0 - eta) * z[s2] + eta * (g * lam * y + x[s2])
            stack.append((s2, prob * env.transition[s, s2], y2))
    reached = den > 0
    num[reached] /= den[reached, None]
    return num


def _outcomes(env: EnvSpec, state: int):
    """(next_state, next_discount, reward, probability) for one step from ``state``."""
    out = []
    for s2 in np.flatnonzero(env.transition[state]):
        p = env.transition[state, s2]
        dist = env.rewards[(state, int(s2))]
        for r, q in zip(dist.values, dist.probs):
            if q > 0:
                out.append((int(s2), env.next_discount(int(s2)), float(r), float(p * q)))
    return out


@dataclass(frozen=True)
class UpdateMoments:
    """Exact conditional moments of ``alpha*delta*e`` (TD) and ``alpha*delta*z`` (ET)."""

    td_mean: np.ndarray
    td_var: np.ndarray
    et_mean: np.ndarray
    et_var: np.ndarray
    z: np.ndarray


def exact_update_moments(
    env: EnvSpec,
    features: FeatureMap,
    lam: float,
    value: ValueFn,
    state: int,
    alpha: float = 1.0,
) -> UpdateMoments:
    """Mean and componentwise variance of both updates at ``state``.

    Computed over the joint distribution of (history reaching ``state``,
    next reward and successor); no independence is assumed.
    """
    dist = conditional_prefixes(env, features, lam, state)
    probs, traces = dist.probs, dist.traces
    z = probs @ traces
    v_s = value.value(state)
    outcomes = _outcomes(env, state)
    deltas = np.array([r + g * value.value(s2) - v_s for s2, g, r, _ in outcomes])
    qs = np.array([q for *_, q in outcomes])

    # joint weights over (prefix i, outcome j)
    wij = probs[:, None] * qs[None, :]
    td = alpha * deltas[None, :, None] * traces[:, None, :]
    et = alpha * deltas[None, :, None] * z[None, None, :]
    td_mean = np.einsum("ij,ijk->k", wij, td)
    et_mean = np.einsum("ij,ijk->k", wij, et)
    td_var = np.einsum("ij,ijk->k", wij, (td - td_mean) ** 2)
    et_var = np.einsum("ij,ijk->k", wij, (et - et_mean) ** 2)
    return UpdateMoments(td_mean, td_var, et_mean, et_var, z)


@dataclass(frozen=True)
class FixedPoint:
    w: np.ndarray
    values: np.ndarray
    rank_deficient: bool
    residual: float


def td_fixed_point(env: EnvSpec, features: FeatureMap, lam: float, gamma: float | None = None) -> FixedPoint:
    """Weights where the expected TD(lam) update vanishes.

    Expectations are sums over the enumerated on-policy distribution of
    ``e_t (g_{t+1} x(S_{t+1}) - x(S_t))^T`` and ``e_t R_{t+1}``. When the
    features are linearly dependent the system is singular but the values
    ``X w`` can still be unique; then the minimum-norm solution is returned
    and flagged. A singularity that leaves the values undetermined raises.
    """
    x = features.matrix
    k = features.dimension
    a = np.zeros((k, k))
    b = np.zeros(k)
    for p in enumerate_prefixes(env, features, lam, gamma):
        s = p.states[-1]
        for s2, g, r, q in _outcomes(env, s):
            wgt = p.prob * q
            a += wgt * np.outer(p.trace, g * x[s2] - x[s])
            b += wgt * r * p.trace
    a = -a  # E[e (x - g x')^T] w = E[e r]
    u, sv, vt = np.linalg.svd(a)
    tol = sv.max() * k * np.finfo(float).eps * 1e3
    rank = int((sv > tol).sum())
    if rank == k:
        w = np.linalg.solve(a, b)
        deficient = False
    else:
        null = vt[rank:].T
        xs = x[: env.num_states]
        if np.abs(xs @ null).max() > 1e-8:
            raise NumericFailureError(f"TD({lam}) fixed point is singular and the values are not determined")
        w = np.linalg.lstsq(a, b, rcond=None)[0]
        deficient = True
    resid = float(np.max(np.abs(a @ w - b)))
    if resid > 1e-8 * max(1.0, np.abs(b).max()):
        raise NumericFailureError(f"TD({lam}) fixed point system is inconsistent (residual {resid:.3g})")
    return FixedPoint(w, x[: env.num_states] @ w, deficient, resid)


def forward_view_reference(trajectory: Trajectory, value: ValueFn, lam: float, alpha: float) -> np.ndarray:
    """Total offline update ``sum_t alpha (G^lam_t - v(S_t)) grad v(S_t)`` with frozen values."""
    states = trajectory.states
    v = np.array([value.value(s) for s in states])
    if not trajectory.truncated:
        v[-1] = 0.0
    g = compute_lambda_return(trajectory, v, lam)
    total = np.zeros_like(value.w)
    for t, s in enumerate(states[:-1]):
        total += alpha * (g[t] - v[t]) * value.gradient(s)
    return total
