"""Online value prediction: TD(lambda), ET(lambda), ET(lambda, eta) and Monte Carlo.

All learners share one value-function representation, ``ValueFn``: a linear
function ``w @ x(s)``. Tabular learning is the special case of one-hot
features, in which case the expected-trace model is kept per state.

Within a step the order of operations is fixed:

1. TD error from the current weights,
2. instantaneous trace ``e <- gamma*lam*e + grad``,
3. expected-trace model update at the current state,
4. mixture trace ``y`` from the freshly updated model,
5. ``w <- w + alpha * delta * y``.

With ``eta = 1`` step 5 uses exactly the same numbers as TD(lambda).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .envs import EnvSpec, FeatureMap, sample_episode
from .errors import InvalidInputError, NumericFailureError
from .mdp import RngStream, Trajectory, Transition, compute_return, td_error
from .traces import LinearTraceModel, TabularTraceModel, accumulate_trace, reset_trace

ALGORITHMS = ("td_lambda", "et_lambda", "et_lambda_eta", "monte_carlo")
STEP_KINDS = ("constant", "episode_power", "visit_power", "step_power")


@dataclass(frozen=True)
class StepSizeSchedule:
    """Step size ``alpha`` (constant) or ``alpha * counter ** -d``.

    The counter is the episode index (``episode_power``), the visit count of
    the current state including this visit (``visit_power``), or the global
    step index (``step_power``). All counters start at 1.
    """

    kind: str = "constant"
    alpha: float = 1.0
    d: float = 1.0

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise InvalidInputError(f"unknown step-size kind {self.kind!r}")
        if self.alpha <= 0 and not (self.kind == "constant" and self.alpha == 0):
            raise InvalidInputError("step size must be positive")
        if self.d < 0:
            raise InvalidInputError("step-size exponent must be non-negative")

    def __call__(self, episode: int, step: int, visits: int) -> float:
        if self.kind == "constant":
            return self.alpha
        counter = {"episode_power": episode, "visit_power": visits, "step_power": step}[self.kind]
        return self.alpha * counter ** (-self.d)

    @property
    def parameter(self) -> float:
        """The swept hyperparameter: ``alpha`` for constants, ``d`` otherwise."""
        return self.alpha if self.kind == "constant" else self.d


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = "et_lambda"
    lam: float = 0.9
    eta: float = 0.0
    value_step: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    trace_step: StepSizeSchedule | None = None
    z_rule: str = "sgd"
    z_target: str = "instantaneous"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError("lambda must lie in [0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidInputError("eta must lie in [0, 1]")
        if self.z_rule not in ("sgd", "empirical_mean"):
            raise InvalidInputError(f"unknown z_rule {self.z_rule!r}")
        if self.z_target not in ("instantaneous", "mixed"):
            raise InvalidInputError(f"unknown z_target {self.z_target!r}")

    @property
    def effective_eta(self) -> float:
        if self.algorithm == "et_lambda":
            return 0.0
        if self.algorithm == "et_lambda_eta":
            return self.eta
        return 1.0

    @property
    def uses_expected_trace(self) -> bool:
        return self.algorithm in ("et_lambda", "et_lambda_eta")

    @property
    def beta_schedule(self) -> StepSizeSchedule:
        return self.value_step if self.trace_step is None else self.trace_step


class ValueFn:
    """Linear value function ``v(s) = w @ x(s)``; one-hot features give a table."""

    def __init__(self, features: FeatureMap, w: np.ndarray | None = None):
        self.features = features
        self.w = np.zeros(features.dimension) if w is None else np.array(w, dtype=np.float64)

    @property
    def kind(self) -> str:
        return "tabular" if self.features.is_one_hot else "linear"

    def value(self, state: int) -> float:
        idx, vals = self.features.sparse_rows[state]
        return float(self.w[idx] @ vals)

    def gradient(self, state: int) -> np.ndarray:
        return self.features.matrix[state].copy()

    def values(self) -> np.ndarray:
        """Values of every non-terminal state."""
        return self.features.matrix[:-1] @ self.w

    def copy(self) -> "ValueFn":
        return ValueFn(self.features, self.w)


def make_trace_model(features: FeatureMap):
    if features.is_one_hot:
        return TabularTraceModel(features.num_states, features.dimension)
    return LinearTraceModel(features)


@dataclass
class TraceState:
    """Everything a learner carries between steps besides the weights."""

    e: np.ndarray
    y: np.ndarray
    model: TabularTraceModel | LinearTraceModel | None
    visits: np.ndarray
    episode: int = 0
    step: int = 0
    gamma_t: float = 0.0
    pending: list = field(default_factory=list)

    @classmethod
    def fresh(cls, features: FeatureMap, with_model: bool) -> "TraceState":
        p = features.dimension
        model = make_trace_model(features) if with_model else None
        return cls(np.zeros(p), np.zeros(p), model, np.zeros(features.num_states + 1, dtype=np.int64))

    def begin_episode(self):
        self.e[:] = 0.0
        self.y[:] = 0.0
        self.gamma_t = 0.0
        self.pending = []
        self.episode += 1


def _advance(traces: TraceState, state: int, config: LearnerConfig) -> float:
    traces.step += 1
    traces.visits[state] += 1
    return config.value_step(traces.episode, traces.step, int(traces.visits[state]))


def _check(delta: float, vec: np.ndarray, traces: TraceState):
    if not math.isfinite(delta) or not np.isfinite(vec).all():
        raise NumericFailureError("non-finite TD error or trace", step=traces.step, episode=traces.episode)


def td_lambda_step(value: ValueFn, traces: TraceState, transition: Transition, config: LearnerConfig):
    """TD(lambda) with an accumulating trace. Mutates and returns ``(value, traces)``."""
    s, s2 = transition.state, transition.next_state
    alpha = _advance(traces, s, config)
    idx, vals = value.features.sparse_rows[s]
    w = value.w
    i2, v2 = value.features.sparse_rows[s2]
    delta = transition.reward + transition.next_discount * float(w[i2] @ v2) - float(w[idx] @ vals)
    e = traces.e
    e *= traces.gamma_t * config.lam
    e[idx] += vals
    _check(delta, e, traces)
    w += (alpha * delta) * e
    traces.gamma_t = transition.next_discount
    return value, traces


def et_step(value: ValueFn, traces: TraceState, transition: Transition, config: LearnerConfig):
    """ET(lambda, eta) step. Mutates and returns ``(value, traces)``."""
    s, s2 = transition.state, transition.next_state
    alpha = _advance(traces, s, config)
    idx, vals = value.features.sparse_rows[s]
    w = value.w
    i2, v2 = value.features.sparse_rows[s2]
    delta = transition.reward + transition.next_discount * float(w[i2] @ v2) - float(w[idx] @ vals)
    gl = traces.gamma_t * config.lam
    e = traces.e
    e *= gl
    e[idx] += vals

    model = traces.model
    if config.z_target == "mixed":
        target = gl * traces.y
        target[idx] += vals
    else:
        target = e
    if config.z_rule == "empirical_mean":
        model.running_mean(s, target)
    else:
        beta = config.beta_schedule(traces.episode, traces.step, int(traces.visits[s]))
        model.regress(s, target, beta)

    eta = config.effective_eta
    y = traces.y
    if eta == 1.0:
        y *= gl
        y[idx] += vals
    elif eta == 0.0:
        y[:] = model.query(s)
    else:
        inner = gl * y
        inner[idx] += vals
        y[:] = (1.0 - eta) * model.query(s) + eta * inner
    _check(delta, y, traces)
    w += (alpha * delta) * y
    traces.gamma_t = transition.next_discount
    return value, traces


def monte_carlo_step(value: ValueFn, traces: TraceState, transition: Transition, config: LearnerConfig):
    """Buffer the transition; at episode end apply the offline return update with frozen weights."""
    alpha = _advance(traces, transition.state, config)
    traces.pending.append((transition, alpha))
    if transition.next_discount == 0.0:
        _flush_monte_carlo(value, traces, truncated=False)
    return value, traces


def _flush_monte_carlo(value: ValueFn, traces: TraceState, truncated: bool):
    if not traces.pending:
        return
    ts = [t for t, _ in traces.pending]
    traj = Trajectory(tuple(ts), truncated=truncated)
    g = compute_return(traj)
    if truncated:
        g = g + np.cumprod(traj.discounts[::-1])[::-1] * value.value(ts[-1].next_state)
    snapshot = value.w.copy()
    total = np.zeros_like(snapshot)
    for (t, alpha), g_t in zip(traces.pending, g):
        idx, vals = value.features.sparse_rows[t.state]
        err = g_t - float(snapshot[idx] @ vals)
        if not math.isfinite(err):
            raise NumericFailureError("non-finite Monte Carlo error", step=traces.step, episode=traces.episode)
        total[idx] += (alpha * err) * vals
    value.w += total
    traces.pending = []


_STEP = {
    "td_lambda": td_lambda_step,
    "et_lambda": et_step,
    "et_lambda_eta": et_step,
    "monte_carlo": monte_carlo_step,
}


class Learner:
    """A value function plus its trace state under a fixed configuration."""

    def __init__(self, features: FeatureMap, config: LearnerConfig):
        self.config = config
        self.value = ValueFn(features)
        self.traces = TraceState.fresh(features, config.uses_expected_trace)
        self._step = _STEP[config.algorithm]

    @property
    def features(self) -> FeatureMap:
        return self.value.features

    def begin_episode(self):
        self.traces.begin_episode()

    def step(self, transition: Transition):
        self._step(self.value, self.traces, transition, self.config)

    def end_episode(self, truncated: bool = False):
        if self.config.algorithm == "monte_carlo":
            _flush_monte_carlo(self.value, self.traces, truncated)

    def learn(self, trajectory: Trajectory):
        """Process one full episode: reset traces, stream transitions, finish."""
        self.begin_episode()
        for t in trajectory.transitions:
            self.step(t)
        self.end_episode(trajectory.truncated)


@dataclass
class EpisodeDiagnostics:
    episode: int
    length: int
    total_reward: float
    truncated: bool
    terminal_reward: float


def run_episode(env: EnvSpec, learner: Learner, rng: RngStream, max_steps: int | None = None):
    """Sample one episode and learn from it online.

    Returns ``(learner, trajectory, diagnostics)``; the learner is updated in place.
    """
    traj = sample_episode(env, rng, max_steps, episode_id=learner.traces.episode + 1)
    try:
        learner.learn(traj)
    except NumericFailureError as exc:
        raise NumericFailureError("learning diverged", step=exc.step, episode=learner.traces.episode) from exc
    last = traj.transitions[-1]
    diag = EpisodeDiagnostics(
        episode=learner.traces.episode,
        length=len(traj),
        total_reward=float(traj.rewards.sum()),
        truncated=traj.truncated,
        terminal_reward=last.reward,
    )
    return learner, traj, diag


def rmse(values: np.ndarray, target: np.ndarray) -> float:
    """Root mean squared error, uniform over non-terminal states."""
    diff = np.asarray(values) - np.asarray(target)
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class TrainingRun:
    config: LearnerConfig
    seed: int
    episodes: np.ndarray
    rmse: np.ndarray
    weights: np.ndarray
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    first_reward_episode: int | None = None


def run_training(
    env: EnvSpec,
    features: FeatureMap,
    config: LearnerConfig,
    episodes: int,
    seed: int,
    *,
    true_values: np.ndarray | None = None,
    rmse_every: int = 1,
    snapshot_at: tuple[int, ...] = (),
    snapshot_first_reward: bool = False,
    stream_id: int = 0,
    on_episode: Callable[[Learner, Trajectory], None] | None = None,
) -> TrainingRun:
    """Train for ``episodes`` episodes and record RMSE against the exact values.

    The environment stream depends only on ``(seed, stream_id)``, so runs with
    different learner configurations see identical episodes.
    """
    if episodes < 1:
        raise InvalidInputError("episodes must be >= 1")
    if rmse_every < 1:
        raise InvalidInputError("rmse_every must be >= 1")
    if true_values is None:
        from .oracles import exact_state_values

        true_values = exact_state_values(env).v
    rng = RngStream(seed, stream_id)
    learner = Learner(features, config)
    recorded_at, errors = [], []
    snapshots: dict[int, np.ndarray] = {}
    first_reward = None
    wanted = set(snapshot_at)
    for k in range(1, episodes + 1):
        _, traj, diag = run_episode(env, learner, rng)
        if on_episode is not None:
            on_episode(learner, traj)
        if k in wanted:
            snapshots[k] = learner.value.values()
        if snapshot_first_reward and first_reward is None and diag.terminal_reward > 0:
            first_reward = k
            snapshots[k] = learner.value.values()
        if k % rmse_every == 0 or k == episodes:
            recorded_at.append(k)
            errors.append(rmse(learner.value.values(), true_values))
    return TrainingRun(
        config=config,
        seed=seed,
        episodes=np.array(recorded_at),
        rmse=np.array(errors),
        weights=learner.value.w.copy(),
        snapshots=snapshots,
        first_reward_episode=first_reward,
    )


def offline_td_lambda_update(value: ValueFn, trajectory: Trajectory, lam: float, alpha: float) -> np.ndarray:
    """Summed TD(lambda) update over an episode with the weights held fixed (backward view)."""
    e = reset_trace(value.w)
    total = np.zeros_like(value.w)
    gamma_t = 0.0
    for t in trajectory.transitions:
        delta = td_error(t.reward, t.next_discount, value.value(t.next_state), value.value(t.state))
        e = accumulate_trace(e, gamma_t, lam, value.gradient(t.state))
        total += alpha * delta * e
        gamma_t = t.next_discount
    return total


def with_eta(config: LearnerConfig, eta: float) -> LearnerConfig:
    return replace(config, algorithm="et_lambda_eta", eta=eta)
