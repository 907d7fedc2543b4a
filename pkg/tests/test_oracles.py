import numpy as np
import pytest

from etraces.envs import (
    EnvSpec,
    FeatureMap,
    GridWorldParams,
    MultiChainParams,
    RewardDist,
    build_multi_chain,
    build_open_grid,
    multichain_features,
    sample_episode,
    tabular_features,
)
from etraces.errors import EnumerationBudgetError, InvalidInputError, NumericFailureError
from etraces.learners import Learner, LearnerConfig, StepSizeSchedule, ValueFn
from etraces.mdp import RngStream, compute_return
from etraces.oracles import (
    conditional_prefixes,
    enumerate_prefixes,
    exact_expected_trace,
    exact_state_values,
    exact_update_moments,
    expected_mixture_trace,
    expected_visits,
    predecessor_features,
    td_fixed_point,
)


def line_env(n: int) -> EnvSpec:
    """Deterministic line 0 -> 1 -> ... -> n-1 -> terminal, zero rewards."""
    p = np.zeros((n, n + 1))
    for s in range(n):
        p[s, s + 1] = 1.0
    mu = np.zeros(n)
    mu[0] = 1.0
    return EnvSpec("line", n, mu, p, {(s, s + 1): RewardDist.constant(0.0) for s in range(n)})


def test_multichain_values():
    p = MultiChainParams(3, 4)
    ex = exact_state_values(build_multi_chain(p))
    assert ex.v[p.bottleneck_state] == pytest.approx(0.8, abs=1e-12)
    assert ex.v[p.start_state] == pytest.approx(p.chain_length + 1 + 0.8, abs=1e-12)
    assert ex.bellman_residual <= 1e-10


def test_start_value_against_sampling():
    p = MultiChainParams(3, 4)
    env = build_multi_chain(p)
    rng = RngStream(8)
    g = np.array([compute_return(sample_episode(env, rng))[0] for _ in range(100_000)])
    assert abs(g.mean() - exact_state_values(env).v[0]) <= 3 * g.std(ddof=1) / np.sqrt(len(g))


@pytest.mark.parametrize("w,h,q", [(10, 10, 0.2), (4, 7, 0.5), (2, 1, 1.0)])
def test_grid_values_equal_success_probability(w, h, q):
    ex = exact_state_values(build_open_grid(GridWorldParams(w, h, q)))
    np.testing.assert_allclose(ex.v, q, atol=1e-12)


def test_singular_system_reported():
    p = np.array([[1.0, 0.0]])
    env = EnvSpec("loop", 1, np.array([1.0]), p, {(0, 0): RewardDist.constant(1.0)})
    with pytest.raises(NumericFailureError):
        exact_state_values(env)


def test_expected_visits(chain22):
    p, env, _, _ = chain22
    n = expected_visits(env)
    assert n[p.start_state] == pytest.approx(1.0)
    assert n[p.chain_state(0, 1)] == pytest.approx(0.5)


def test_conditional_probabilities_sum_to_one(chain44):
    p, env, tab, _ = chain44
    prefixes = enumerate_prefixes(env, tab, 0.9)
    for s in range(env.num_states):
        dist = conditional_prefixes(env, tab, 0.9, s, prefixes=prefixes)
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert dist.marginal == pytest.approx(sum(q.prob for q in dist.prefixes), abs=1e-12)
    with pytest.raises(InvalidInputError):
        conditional_prefixes(env, tab, 0.9, env.terminal)
    with pytest.raises(InvalidInputError):
        conditional_prefixes(env, tab, 0.9, p.bottleneck_state, time=1)


def test_expected_trace_examples():
    env = line_env(2)
    tab = tabular_features(env)
    np.testing.assert_allclose(exact_expected_trace(env, tab, 0.9, 0), tab(0))
    np.testing.assert_allclose(exact_expected_trace(env, tab, 0.9, 1), tab(1) + 0.9 * tab(0))
    np.testing.assert_allclose(exact_expected_trace(env, tab, 0.9, 1, time=1), tab(1) + 0.9 * tab(0))


def test_expected_trace_at_bottleneck():
    p = MultiChainParams(2, 1)
    env = build_multi_chain(p)
    z = exact_expected_trace(env, tabular_features(env), 1.0, p.bottleneck_state)
    np.testing.assert_allclose(z, [1.0, 0.5, 0.5, 1.0])


def test_predecessor_features_examples(chain22):
    p, env, tab, lin = chain22
    for feats in (tab, lin):
        np.testing.assert_allclose(predecessor_features(env, feats, 0.0), feats.matrix[:-1])
        np.testing.assert_allclose(predecessor_features(env, feats, 0.9)[p.start_state], feats(p.start_state))
    line = line_env(3)
    t3 = tabular_features(line)
    np.testing.assert_allclose(predecessor_features(line, t3, 0.5)[2], [0.25, 0.5, 1.0])


def test_enumeration_budget():
    env = build_open_grid(GridWorldParams(6, 6))
    tab = tabular_features(env)
    with pytest.raises(EnumerationBudgetError):
        enumerate_prefixes(env, tab, 0.5, budget=100)


def test_empirical_mean_converges_to_expected_trace():
    p = MultiChainParams(4, 2)
    env = build_multi_chain(p)
    tab = tabular_features(env)
    lam = 0.9
    z = predecessor_features(env, tab, lam)
    cfg = LearnerConfig("et_lambda", lam, value_step=StepSizeSchedule("constant", 0.0), z_rule="empirical_mean")
    learner = Learner(tab, cfg)
    rng = RngStream(21)
    n = 10_000
    traces_at_b = []
    for _ in range(n):
        traj = sample_episode(env, rng)
        learner.learn(traj)
    b = p.bottleneck_state
    # standard error from the exact conditional distribution of e at the bottleneck
    dist = conditional_prefixes(env, tab, lam, b)
    var = dist.probs @ (dist.traces - z[b]) ** 2
    se = np.sqrt(var / n)
    dev = np.abs(learner.traces.model.z[b] - z[b])
    assert np.all((dev <= 3 * se) | (se == 0) & (dev < 1e-12))
    assert learner.traces.model.counts[b] == n


def test_moments_deterministic_env_equal():
    env = line_env(3)
    tab = tabular_features(env)
    value = ValueFn(tab, [0.3, -0.2, 0.5, 0.0])
    mom = exact_update_moments(env, tab, 0.9, value, 2)
    np.testing.assert_allclose(mom.td_var, mom.et_var, atol=1e-15)
    assert not mom.td_var.any()


def test_moments_zero_value_zero_reward():
    env = build_open_grid(GridWorldParams(3, 3, success_probability=0.0))
    tab = tabular_features(env)
    mom = exact_update_moments(env, tab, 0.9, ValueFn(tab), env.num_states - 1)
    assert not mom.td_mean.any() and not mom.et_mean.any() and not mom.td_var.any()


def test_moments_at_bottleneck(chain44):
    p, env, tab, _ = chain44
    value = ValueFn(tab, np.linspace(-1, 1, tab.dimension))
    mom = exact_update_moments(env, tab, 0.8, value, p.bottleneck_state, alpha=0.1)
    np.testing.assert_allclose(mom.et_mean, mom.td_mean, atol=1e-12)
    branch = [p.chain_state(b, i) for b in range(4) for i in range(4)]
    assert np.all(mom.et_var[branch] < mom.td_var[branch])
    assert np.all(mom.et_var <= mom.td_var + 1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.4, 0.9, 1.0])
def test_tabular_fixed_point_is_true_value(lam, chain44):
    _, env, tab, _ = chain44
    fp = td_fixed_point(env, tab, lam)
    assert not fp.rank_deficient
    np.testing.assert_allclose(fp.values, exact_state_values(env).v, atol=1e-10)


def test_lambda_one_fixed_point_is_monte_carlo_regression():
    # features that cannot represent v exactly: a random 3-dim projection
    p = MultiChainParams(3, 2)
    env = build_multi_chain(p)
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(size=(env.num_states, 3)), np.zeros(3)])
    feats = FeatureMap(x)
    fp = td_fixed_point(env, feats, 1.0)
    # weighted least squares of returns on features, weights = expected visits
    d = expected_visits(env)
    v = exact_state_values(env).v
    xs = x[:-1]
    w_ls = np.linalg.solve(xs.T @ (d[:, None] * xs), xs.T @ (d * v))
    np.testing.assert_allclose(fp.w, w_ls, atol=1e-10)


def test_multichain_features_fixed_point_matches_values():
    p = MultiChainParams(4, 4)
    env = build_multi_chain(p)
    fp = td_fixed_point(env, multichain_features(p), 0.9)
    assert fp.rank_deficient
    np.testing.assert_allclose(fp.values, exact_state_values(env).v, atol=1e-10)


def test_undetermined_fixed_point_raises():
    # state 2 is never reached, so its weight is free and its value undetermined
    p = np.zeros((3, 4))
    p[0, 1] = p[1, 3] = p[2, 3] = 1.0
    rewards = {(0, 1): RewardDist.constant(1.0), (1, 3): RewardDist.constant(1.0), (2, 3): RewardDist.constant(0.0)}
    env = EnvSpec("unreachable", 3, np.array([1.0, 0.0, 0.0]), p, rewards)
    with pytest.raises(NumericFailureError):
        td_fixed_point(env, tabular_features(env), 0.5)


@pytest.mark.parametrize("eta", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_expected_mixture_trace_equals_expected_trace(eta, chain22):
    _, env, tab, lin = chain22
    for feats in (tab, lin):
        np.testing.assert_allclose(expected_mixture_trace(env, feats, 0.9, eta),
                                   predecessor_features(env, feats, 0.9), atol=1e-10)
