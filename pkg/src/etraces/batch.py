"""Vectorised learning of many configurations on one shared episode stream.

Sweeps evaluate dozens of hyperparameter points per seed. Because the
behaviour policy is fixed, every configuration for a given seed sees the
same episodes, so the per-step arithmetic can run over a leading
"configuration" axis. The update rules are those of ``learners.et_step`` and
``learners.td_lambda_step``; the test suite checks that both paths agree.

Configurations that diverge are not raised: their weights turn non-finite
and their RMSE is reported as ``nan``/``inf`` so the sweep can flag them.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit

from .envs import EnvSpec, FeatureMap, sample_episode
from .errors import InvalidInputError, NumericFailureError
from .learners import LearnerConfig, StepSizeSchedule, TrainingRun, run_training
from .mdp import RngStream

_COUNTER = {"constant": 0, "episode_power": 1, "visit_power": 2, "step_power": 3}


def _schedule_arrays(schedules: Sequence[StepSizeSchedule]):
    code = np.array([_COUNTER[s.kind] for s in schedules], dtype=np.int64)
    scale = np.array([s.alpha for s in schedules], dtype=np.float64)
    d = np.array([0.0 if s.kind == "constant" else s.d for s in schedules])
    return code, scale, d


@njit(cache=True, nogil=True)
def _learn_episode(states, rewards, discounts, indptr, indices, data, w, e, y, z, tabular, n_et, lam, eta,
                   a_code, a_scale, a_d, b_code, b_scale, b_d, running_mean, mixed, visits, episode, step_count):
    n_cfg, p_dim = w.shape
    counters = np.empty(4)
    inner = np.empty(p_dim)
    target = np.empty(p_dim)
    zq = np.empty(p_dim)
    e[:, :] = 0.0
    y[:, :] = 0.0
    gamma_t = 0.0
    for t in range(rewards.shape[0]):
        s = states[t]
        s2 = states[t + 1]
        step_count += 1
        visits[s] += 1
        counters[0] = 1.0
        counters[1] = episode
        counters[2] = visits[s]
        counters[3] = step_count
        g2 = discounts[t]
        lo, hi = indptr[s], indptr[s + 1]
        lo2, hi2 = indptr[s2], indptr[s2 + 1]
        for b in range(n_cfg):
            alpha = a_scale[b] * counters[a_code[b]] ** (-a_d[b])
            v_s = 0.0
            for j in range(lo, hi):
                v_s += w[b, indices[j]] * data[j]
            v_n = 0.0
            for j in range(lo2, hi2):
                v_n += w[b, indices[j]] * data[j]
            delta = rewards[t] + g2 * v_n - v_s
            gl = gamma_t * lam[b]
            if b < n_et:
                for k in range(p_dim):
                    inner[k] = gl * y[b, k]
                for j in range(lo, hi):
                    inner[indices[j]] += data[j]
            for k in range(p_dim):
                e[b, k] *= gl
            for j in range(lo, hi):
                e[b, indices[j]] += data[j]
            step = alpha * delta
            if b >= n_et:
                for k in range(p_dim):
                    w[b, k] += step * e[b, k]
                continue
            for k in range(p_dim):
                target[k] = inner[k] if mixed[b] else e[b, k]
            if running_mean[b]:
                beta = 1.0 / visits[s]
            else:
                beta = b_scale[b] * counters[b_code[b]] ** (-b_d[b])
            if tabular:
                for k in range(p_dim):
                    z[b, s, k] += beta * (target[k] - z[b, s, k])
                    zq[k] = z[b, s, k]
            else:
                for k in range(p_dim):
                    acc = 0.0
                    for j in range(lo, hi):
                        acc += z[b, k, indices[j]] * data[j]
                    err = beta * (target[k] - acc)
                    acc = 0.0
                    for j in range(lo, hi):
                        z[b, k, indices[j]] += err * data[j]
                        acc += z[b, k, indices[j]] * data[j]
                    zq[k] = acc
            mix = eta[b]
            for k in range(p_dim):
                y[b, k] = (1.0 - mix) * zq[k] + mix * inner[k]
                w[b, k] += step * y[b, k]
        gamma_t = g2
    return step_count


class BatchLearner:
    """TD(lambda) and ET(lambda, eta) learners sharing features and episodes.

    Expected-trace configurations are stored first so their model arrays are
    contiguous slices.
    """

    def __init__(self, features: FeatureMap, configs: Sequence[LearnerConfig]):
        for c in configs:
            if c.algorithm == "monte_carlo":
                raise InvalidInputError("monte_carlo is not batched; use learners.run_training")
        order = sorted(range(len(configs)), key=lambda i: not configs[i].uses_expected_trace)
        self.order = np.array(order)
        cs = [configs[i] for i in order]
        self.configs = cs
        self.features = features
        b, p = len(cs), features.dimension
        self.n_et = sum(c.uses_expected_trace for c in cs)
        self.lam = np.array([c.lam for c in cs])
        self.eta = np.array([c.effective_eta for c in cs[: self.n_et]], dtype=np.float64)
        self.alpha_code, self.alpha_scale, self.alpha_d = _schedule_arrays([c.value_step for c in cs])
        ets = cs[: self.n_et]
        self.beta_code, self.beta_scale, self.beta_d = _schedule_arrays([c.beta_schedule for c in ets])
        self.running_mean = np.array([c.z_rule == "empirical_mean" for c in ets], dtype=np.bool_)
        self.mixed = np.array([c.z_target == "mixed" for c in ets], dtype=np.bool_)
        self.w = np.zeros((b, p))
        self.e = np.zeros((b, p))
        self.y = np.zeros((self.n_et, p))
        self.tabular = features.is_one_hot
        if self.tabular:
            self.z = np.zeros((self.n_et, features.num_states + 1, p))
        else:
            self.z = np.zeros((self.n_et, p, features.dimension))
        self.visits = np.zeros(features.num_states + 1, dtype=np.int64)
        self.episode = 0
        self.step_count = 0
        rows = features.sparse_rows
        self._indptr = np.cumsum([0] + [len(i) for i, _ in rows]).astype(np.int64)
        self._indices = np.concatenate([i for i, _ in rows]).astype(np.int64)
        self._data = np.concatenate([v for _, v in rows]).astype(np.float64)

    def learn(self, states: Sequence[int], rewards: Sequence[float], discounts: Sequence[float]):
        """One episode given as S_0..S_T, R_1..R_T and g_1..g_T."""
        self.episode += 1
        self.step_count = _learn_episode(
            np.asarray(states, dtype=np.int64),
            np.asarray(rewards, dtype=np.float64),
            np.asarray(discounts, dtype=np.float64),
            self._indptr, self._indices, self._data,
            self.w, self.e, self.y, self.z, self.tabular, self.n_et, self.lam, self.eta,
            self.alpha_code, self.alpha_scale, self.alpha_d,
            self.beta_code, self.beta_scale, self.beta_d,
            self.running_mean, self.mixed, self.visits, self.episode, self.step_count,
        )

    def values(self) -> np.ndarray:
        """(configs, states) value table in the caller's configuration order."""
        v = self.w @ self.features.matrix[:-1].T
        out = np.empty_like(v)
        out[self.order] = v
        return out

    def weights(self) -> np.ndarray:
        out = np.empty_like(self.w)
        out[self.order] = self.w
        return out


def run_batch(
    env: EnvSpec,
    features: FeatureMap,
    configs: Sequence[LearnerConfig],
    episodes: int,
    seed: int,
    *,
    true_values: np.ndarray | None = None,
    rmse_every: int = 1,
    snapshot_at: tuple[int, ...] = (),
    snapshot_first_reward: bool = False,
    stream_id: int = 0,
) -> list[TrainingRun]:
    """Batched counterpart of ``learners.run_training`` (same episode stream per seed)."""
    if episodes < 1:
        raise InvalidInputError("episodes must be >= 1")
    if true_values is None:
        from .oracles import exact_state_values

        true_values = exact_state_values(env).v
    mc = [i for i, c in enumerate(configs) if c.algorithm == "monte_carlo"]
    batched = [i for i in range(len(configs)) if i not in set(mc)]
    results: list[TrainingRun | None] = [None] * len(configs)
    for i in mc:
        try:
            results[i] = run_training(
                env, features, configs[i], episodes, seed, true_values=true_values, rmse_every=rmse_every,
                snapshot_at=snapshot_at, snapshot_first_reward=snapshot_first_reward, stream_id=stream_id,
            )
        except NumericFailureError:
            # keep the sweep going; the divergence shows up as a nan series
            recorded = np.array([k for k in range(1, episodes + 1) if k % rmse_every == 0 or k == episodes])
            results[i] = TrainingRun(configs[i], seed, recorded, np.full(len(recorded), np.nan),
                                     np.full(features.dimension, np.nan))
    if not batched:
        return results
    learner = BatchLearner(features, [configs[i] for i in batched])
    rng = RngStream(seed, stream_id)
    recorded, errs = [], []
    snaps: dict[int, np.ndarray] = {}
    first_reward = None
    wanted = set(snapshot_at)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, episodes + 1):
            traj = sample_episode(env, rng, episode_id=k)
            ts = traj.transitions
            learner.learn([t.state for t in ts] + [ts[-1].next_state], [t.reward for t in ts],
                          [t.next_discount for t in ts])
            if k in wanted:
                snaps[k] = learner.values()
            if snapshot_first_reward and first_reward is None and ts[-1].reward > 0:
                first_reward = k
                snaps[k] = learner.values()
            if k % rmse_every == 0 or k == episodes:
                diff = learner.values() - true_values
                recorded.append(k)
                errs.append(np.sqrt(np.mean(diff * diff, axis=1)))
    errs_arr = np.array(errs)
    weights = learner.weights()
    for j, i in enumerate(batched):
        results[i] = TrainingRun(
            config=configs[i],
            seed=seed,
            episodes=np.array(recorded),
            rmse=errs_arr[:, j].copy(),
            weights=weights[j].copy(),
            snapshots={k: v[j].copy() for k, v in snaps.items()},
            first_reward_episode=first_reward,
        )
    return results

