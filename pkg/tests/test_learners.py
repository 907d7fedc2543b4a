import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etraces.envs import (
    GridWorldParams,
    MultiChainParams,
    build_multi_chain,
    build_open_grid,
    multichain_features,
    sample_episode,
    tabular_features,
)
from etraces.errors import InvalidInputError, NumericFailureError
from etraces.learners import (
    Learner,
    LearnerConfig,
    StepSizeSchedule,
    TraceState,
    ValueFn,
    et_step,
    offline_td_lambda_update,
    rmse,
    run_episode,
    run_training,
    td_lambda_step,
    with_eta,
)
from etraces.mdp import RngStream, Transition, compute_return, make_trajectory
from etraces.oracles import exact_state_values, forward_view_reference, predecessor_features


def test_step_schedules():
    assert StepSizeSchedule("constant", 0.1)(5, 50, 3) == 0.1
    assert StepSizeSchedule("episode_power", 1.0, 0.5)(4, 99, 99) == 0.5
    assert StepSizeSchedule("visit_power", 1.0, 1.0)(99, 99, 4) == 0.25
    assert StepSizeSchedule("step_power", 2.0, 1.0)(99, 8, 99) == 0.25
    s = StepSizeSchedule("visit_power", 1.0, 0.8)
    vals = [s(1, 1, n) for n in range(1, 50)]
    assert all(a >= b > 0 for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidInputError):
        StepSizeSchedule("bogus")
    with pytest.raises(InvalidInputError):
        StepSizeSchedule("visit_power", -1.0)


def test_learner_config_etas():
    assert LearnerConfig("et_lambda", eta=0.7).effective_eta == 0.0
    assert LearnerConfig("td_lambda", eta=0.2).effective_eta == 1.0
    assert LearnerConfig("et_lambda_eta", eta=0.2).effective_eta == 0.2
    assert with_eta(LearnerConfig("td_lambda"), 0.3).effective_eta == 0.3
    with pytest.raises(InvalidInputError):
        LearnerConfig("sarsa")
    with pytest.raises(InvalidInputError):
        LearnerConfig(lam=1.5)
    with pytest.raises(InvalidInputError):
        LearnerConfig(z_rule="median")


def test_value_fn(chain22):
    p, env, tab, lin = chain22
    v = ValueFn(lin, np.arange(lin.dimension, dtype=float))
    assert v.kind == "linear"
    assert v.value(p.start_state) == pytest.approx(lin(p.start_state) @ v.w)
    assert v.value(env.terminal) == 0.0
    np.testing.assert_array_equal(v.gradient(1), lin(1))
    assert ValueFn(tab).kind == "tabular"


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([0.0, 0.5, 0.9, 1.0]), st.sampled_from(["grid", "tab", "lin"]),
       st.sampled_from(["constant", "episode_power", "visit_power", "step_power"]))
def test_eta_one_is_td_lambda_bit_exact(seed, lam, which, kind):
    if which == "grid":
        env = build_open_grid(GridWorldParams(5, 5))
        feats = tabular_features(env)
    else:
        p = MultiChainParams(3, 3)
        env = build_multi_chain(p)
        feats = tabular_features(env) if which == "tab" else multichain_features(p)
    step = StepSizeSchedule(kind, 0.1 if kind == "constant" else 1.0, 0.7)
    td = Learner(feats, LearnerConfig("td_lambda", lam, value_step=step))
    et = Learner(feats, LearnerConfig("et_lambda_eta", lam, eta=1.0, value_step=step, trace_step=step))
    rng = RngStream(seed)
    for k in range(20):
        traj = sample_episode(env, rng)
        td.begin_episode()
        et.begin_episode()
        for t in traj.transitions:
            td.step(t)
            et.step(t)
            assert np.array_equal(td.value.w, et.value.w)


def test_zero_reward_episode_still_trains_z():
    env = build_open_grid(GridWorldParams(3, 3, success_probability=0.0))
    feats = tabular_features(env)
    learner = Learner(feats, LearnerConfig("et_lambda", 0.9, value_step=StepSizeSchedule("constant", 0.5)))
    _, traj, _ = run_episode(env, learner, RngStream(0))
    assert not learner.value.w.any()
    assert learner.traces.model.z[traj.states[-2]].any()


def test_td0_touches_only_current_state():
    env = build_multi_chain(MultiChainParams(2, 2))
    feats = tabular_features(env)
    value = ValueFn(feats)
    traces = TraceState.fresh(feats, False)
    traces.begin_episode()
    cfg = LearnerConfig("td_lambda", 0.0, value_step=StepSizeSchedule("constant", 0.5))
    for t in sample_episode(env, RngStream(1)).transitions:
        before = value.w.copy()
        td_lambda_step(value, traces, t, cfg)
        changed = np.flatnonzero(value.w != before)
        assert set(changed) <= {t.state}


def test_td1_offline_equals_monte_carlo():
    env = build_multi_chain(MultiChainParams(3, 2))
    feats = tabular_features(env)
    value = ValueFn(feats)
    traj = sample_episode(env, RngStream(2))
    upd = offline_td_lambda_update(value, traj, 1.0, 0.1)
    g = compute_return(traj)
    mc = np.zeros(feats.dimension)
    for s, gt in zip(traj.states[:-1], g):
        mc[s] += 0.1 * gt
    np.testing.assert_allclose(upd, mc, atol=1e-12)


def test_two_state_chain_by_hand():
    # s0 -> s1 -> terminal, rewards 1 then 2, w = (0.5, 0.25), alpha 0.1, lambda 0.5
    feats = tabular_features(build_multi_chain(MultiChainParams(1, 1)))
    traj = make_trajectory([0, 1, 3], [1.0, 2.0])
    value = ValueFn(feats, [0.5, 0.25, 0.0])
    traces = TraceState.fresh(feats, False)
    traces.begin_episode()
    cfg = LearnerConfig("td_lambda", 0.5, value_step=StepSizeSchedule("constant", 0.1))
    d0 = 1.0 + 0.25 - 0.5
    w = np.array([0.5 + 0.1 * d0, 0.25, 0.0])
    d1 = 2.0 + 0.0 - w[1]
    w = w + 0.1 * d1 * np.array([0.5, 1.0, 0.0])
    for t in traj.transitions:
        td_lambda_step(value, traces, t, cfg)
    np.testing.assert_allclose(value.w, w, atol=1e-15)
    # and frozen-weight totals agree with the forward view
    frozen = ValueFn(feats, [0.5, 0.25, 0.0])
    np.testing.assert_allclose(offline_td_lambda_update(frozen, traj, 0.5, 0.1),
                               forward_view_reference(traj, frozen, 0.5, 0.1), atol=1e-12)


def test_run_episode_diagnostics():
    p = MultiChainParams(1, 4)
    env = build_multi_chain(p)
    learner = Learner(tabular_features(env), LearnerConfig("td_lambda", 0.9))
    rng = RngStream(0)
    for k in range(1, 6):
        _, traj, diag = run_episode(env, learner, rng)
        assert diag.length == p.chain_length + 2 and diag.episode == k
        assert diag.total_reward == traj.rewards.sum()


def test_determinism(chain44):
    p, env, tab, lin = chain44
    cfg = LearnerConfig("et_lambda", 0.9, value_step=StepSizeSchedule("constant", 0.05))
    a = run_training(env, lin, cfg, 30, seed=11)
    b = run_training(env, lin, cfg, 30, seed=11)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.rmse, b.rmse)


def test_et_credits_earlier_branches_on_surprise():
    p = MultiChainParams(4, 2)
    env = build_multi_chain(p)
    feats = tabular_features(env)
    cfg = LearnerConfig("et_lambda", 0.9, value_step=StepSizeSchedule("constant", 0.1))
    learner = Learner(feats, cfg)
    rng = RngStream(3)
    seen = set()
    for _ in range(200):
        traj = sample_episode(env, rng)
        if traj.transitions[-1].reward < 0 and len(seen) >= 2:
            before = learner.value.w.copy()
            learner.learn(traj)
            branch = (traj.states[1] - 1) // p.chain_length
            delta = learner.value.w - before
            others = [b for b in seen if b != branch]
            assert others
            for b in others:
                assert delta[p.chain_state(b, p.chain_length - 1)] != 0.0
            return
        learner.learn(traj)
        seen.add((traj.states[1] - 1) // p.chain_length)
    pytest.fail("no -1 terminal reward sampled")


def test_frozen_learner_has_constant_rmse(chain22):
    _, env, tab, _ = chain22
    run = run_training(env, tab, LearnerConfig("et_lambda", 0.9, value_step=StepSizeSchedule("constant", 0.0)), 10, 0)
    assert np.all(run.rmse == run.rmse[0])


def test_td0_converges_on_small_chain(chain22):
    _, env, tab, _ = chain22
    cfg = LearnerConfig("td_lambda", 0.0, value_step=StepSizeSchedule("visit_power", 1.0, 1.0))
    run = run_training(env, tab, cfg, 10_000, seed=0, rmse_every=1000)
    assert run.rmse[-1] < 0.05


def test_rmse_is_uniform():
    assert rmse([1.0, 0.0], [0.0, 0.0]) == pytest.approx(np.sqrt(0.5))


def test_run_training_records_and_snapshots(grid10):
    env, feats = grid10
    cfg = LearnerConfig("td_lambda", 0.9, value_step=StepSizeSchedule("episode_power", 1.0, 0.5))
    run = run_training(env, feats, cfg, 20, seed=1, rmse_every=7, snapshot_at=(3,), snapshot_first_reward=True)
    assert run.episodes.tolist() == [7, 14, 20]
    assert 3 in run.snapshots
    if run.first_reward_episode is not None:
        assert np.count_nonzero(run.snapshots[run.first_reward_episode]) > 0
    with pytest.raises(InvalidInputError):
        run_training(env, feats, cfg, 0, seed=1)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.9, 1.0])
def test_offline_forward_backward(lam, rng):
    env = build_multi_chain(MultiChainParams(3, 3))
    feats = multichain_features(MultiChainParams(3, 3))
    r = RngStream(4)
    for _ in range(20):
        traj = sample_episode(env, r)
        value = ValueFn(feats, rng.normal(size=feats.dimension))
        np.testing.assert_allclose(offline_td_lambda_update(value, traj, lam, 0.2),
                                   forward_view_reference(traj, value, lam, 0.2), atol=1e-10)


def test_lambda_zero_everything_coincides(chain44):
    _, env, tab, _ = chain44
    step = StepSizeSchedule("visit_power", 1.0, 0.8)
    runs = [run_training(env, tab, LearnerConfig(a, 0.0, value_step=step), 50, seed=5)
            for a in ("td_lambda", "et_lambda")]
    assert np.array_equal(runs[0].weights, runs[1].weights)


def _bottleneck_samples(lam, n=100_000):
    p = MultiChainParams(4, 2)
    env = build_multi_chain(p)
    feats = tabular_features(env)
    z = predecessor_features(env, feats, lam)
    b = p.bottleneck_state
    value = ValueFn(feats, exact_state_values(env).v.tolist() + [0.0])
    value.w[b] = 0.3
    rng = RngStream(77)
    td, et = np.empty((n, feats.dimension)), np.empty((n, feats.dimension))
    for i in range(n):
        traj = sample_episode(env, rng)
        e = np.zeros(feats.dimension)
        for t in traj.transitions:
            e = (1.0 if t.state != p.start_state else 0.0) * lam * e + feats(t.state)
        t = traj.transitions[-1]
        delta = t.reward - value.value(b)
        td[i], et[i] = delta * e, delta * z[b]
    return td, et


@pytest.mark.slow
def test_single_step_updates_mean_and_variance():
    td, et = _bottleneck_samples(0.9)
    n = len(td)
    se = np.sqrt(td.var(axis=0, ddof=1) / n + et.var(axis=0, ddof=1) / n)
    gap = np.abs(td.mean(axis=0) - et.mean(axis=0))
    assert np.all(gap <= 3 * se + 1e-15)
    vt, ve = td.var(axis=0, ddof=1), et.var(axis=0, ddof=1)
    c = td - td.mean(axis=0)
    se_v = np.sqrt(np.maximum((c**4).mean(axis=0) - vt**2, 0) / n)
    assert np.all(ve <= vt + 3 * se_v + 1e-15)
    assert np.sum(ve < vt - 3 * se_v) >= 1


def test_monte_carlo_offline_update():
    env = build_multi_chain(MultiChainParams(1, 2))
    feats = tabular_features(env)
    learner = Learner(feats, LearnerConfig("monte_carlo", 1.0, value_step=StepSizeSchedule("constant", 0.5)))
    traj = sample_episode(env, RngStream(0))
    learner.learn(traj)
    g = compute_return(traj)
    np.testing.assert_allclose(learner.value.w[:4], 0.5 * g)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_location():
    env = build_multi_chain(MultiChainParams(2, 2))
    feats = multichain_features(MultiChainParams(2, 2))
    cfg = LearnerConfig("td_lambda", 1.0, value_step=StepSizeSchedule("constant", 1e308))
    with pytest.raises(NumericFailureError) as info:
        run_training(env, feats, cfg, 50, seed=0)
    assert info.value.episode is not None and info.value.step is not None


def test_et_step_order_uses_fresh_z():
    # with beta = 1 the model row equals the current trace, so ET(lambda) uses e itself on the first visit
    feats = tabular_features(build_multi_chain(MultiChainParams(1, 1)))
    value = ValueFn(feats)
    traces = TraceState.fresh(feats, True)
    traces.begin_episode()
    cfg = LearnerConfig("et_lambda", 0.5, value_step=StepSizeSchedule("constant", 1.0))
    et_step(value, traces, Transition(0, 0, 1.0, 1, 1.0), cfg)
    np.testing.assert_array_equal(value.w, [1.0, 0.0, 0.0])
    et_step(value, traces, Transition(1, 0, 0.0, 2, 1.0), cfg)
    # delta = 0 + 0 - 0; nothing moves but z(1) = 0.5 x0 + x1
    np.testing.assert_array_equal(traces.model.z[1], [0.5, 1.0, 0.0])
