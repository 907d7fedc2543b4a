import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

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
from etraces.errors import InvalidInputError
from etraces.mdp import RngStream


def test_grid_top_left_successors():
    env = build_open_grid(GridWorldParams())
    p = env.transition[0]
    assert p[1] == 0.5 and p[10] == 0.5
    assert p.sum() == pytest.approx(1.0)
    assert env.rewards[(0, 1)].mean == 0.0


def test_grid_bottom_right_terminates():
    env = build_open_grid(GridWorldParams(success_probability=0.2))
    br = env.num_states - 1
    assert env.transition[br, env.terminal] == 1.0
    assert env.rewards[(br, env.terminal)].mean == pytest.approx(0.2)
    assert env.expected_reward[br] == pytest.approx(0.2)


def test_grid_edges_move_one_way():
    env = build_open_grid(GridWorldParams(3, 3))
    # right edge goes down, bottom edge goes right
    assert env.transition[2, 5] == 1.0
    assert env.transition[6, 7] == 1.0


def test_two_by_one_grid():
    env = build_open_grid(GridWorldParams(2, 1))
    assert env.num_states == 2
    assert env.transition[0, 1] == 1.0
    traj = sample_episode(env, RngStream(0))
    assert traj.states == [0, 1, 2]


def test_grid_params_validated():
    with pytest.raises(InvalidInputError):
        GridWorldParams(1, 1)
    with pytest.raises(InvalidInputError):
        GridWorldParams(success_probability=1.5)


def test_multichain_structure():
    p = MultiChainParams(2, 3)
    env = build_multi_chain(p)
    assert env.num_states == 1 + 2 * 3 + 1
    np.testing.assert_allclose(env.transition[0, [p.chain_state(0, 0), p.chain_state(1, 0)]], [0.5, 0.5])
    assert env.transition[p.chain_state(1, 2), p.bottleneck_state] == 1.0
    term = env.rewards[(p.bottleneck_state, env.terminal)]
    assert term.mean == pytest.approx(0.8)
    assert env.rewards[(0, p.chain_state(0, 0))].mean == 1.0


def test_multichain_smallest_episode():
    p = MultiChainParams(1, 1)
    env = build_multi_chain(p)
    traj = sample_episode(env, RngStream(0))
    assert traj.states == [0, 1, 2, 3]
    assert len(traj) == 3


def test_multichain_params_validated():
    with pytest.raises(InvalidInputError):
        MultiChainParams(0, 4)
    with pytest.raises(InvalidInputError):
        MultiChainParams(2, 2, terminal_plus_probability=-0.1)


def test_envspec_rejects_bad_rows():
    p = np.array([[0.5, 0.4]])
    with pytest.raises(InvalidInputError):
        EnvSpec("bad", 1, np.array([1.0]), p, {(0, 0): RewardDist.constant(0), (0, 1): RewardDist.constant(0)})
    with pytest.raises(InvalidInputError):
        EnvSpec("bad", 1, np.array([1.0]), np.array([[0.0, 1.0]]), {(0, 1): RewardDist((1.0, 0.0), (0.5, 0.4))})
    with pytest.raises(InvalidInputError):
        EnvSpec("bad", 1, np.array([1.0]), np.array([[0.0, 1.0]]), {})


def test_deterministic_chain_length_m1():
    p = MultiChainParams(1, 5)
    env = build_multi_chain(p)
    rng = RngStream(3)
    for _ in range(20):
        assert len(sample_episode(env, rng)) == p.chain_length + 2


def test_two_by_two_grid_paths():
    env = build_open_grid(GridWorldParams(2, 2))
    rng = RngStream(1)
    seen = set()
    for _ in range(50):
        traj = sample_episode(env, rng)
        moves = [t for t in traj.transitions if t.next_state != env.terminal]
        assert len(moves) == 2
        seen.add(tuple(traj.states))
    assert seen == {(0, 1, 3, 4), (0, 2, 3, 4)}


def test_sampler_is_reproducible():
    env = build_open_grid(GridWorldParams())
    a = [sample_episode(env, RngStream(5, 2)) for _ in range(1)][0]
    b = sample_episode(env, RngStream(5, 2))
    assert a.transitions == b.transitions


def test_truncation_is_flagged():
    env = build_open_grid(GridWorldParams())
    traj = sample_episode(env, RngStream(0), max_steps=3)
    assert traj.truncated and len(traj) == 3
    assert traj.transitions[-1].next_discount == 1.0
    with pytest.raises(InvalidInputError):
        sample_episode(env, RngStream(0), max_steps=0)


def test_default_max_steps():
    assert build_open_grid(GridWorldParams()).default_max_steps == 10 * 19
    assert build_multi_chain(MultiChainParams(3, 4)).default_max_steps == 10 * 6


@pytest.mark.parametrize("which", ["grid", "chain"])
def test_sampler_matches_model(which):
    env = build_open_grid(GridWorldParams(4, 4)) if which == "grid" else build_multi_chain(MultiChainParams(5, 2))
    counts = np.zeros_like(env.transition)
    rng = RngStream(99)
    steps = 0
    while steps < 100_000:
        for t in sample_episode(env, rng):
            counts[t.state, t.next_state] += 1
            steps += 1
    for s in range(env.num_states):
        n = counts[s].sum()
        if n == 0:
            continue
        p = env.transition[s]
        se = np.sqrt(p * (1 - p) / n)
        dev = np.abs(counts[s] / n - p)
        assert np.all((dev <= 3 * se) | (se == 0) & (dev == 0)), (s, dev, se)


def test_terminal_reward_frequencies():
    env = build_multi_chain(MultiChainParams(2, 1))
    rng = RngStream(4)
    last = np.array([sample_episode(env, rng).transitions[-1].reward for _ in range(20_000)])
    frac = (last > 0).mean()
    assert abs(frac - 0.9) <= 3 * np.sqrt(0.09 / len(last))


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 1000))
def test_grid_path_length(w, h, seed):
    env = build_open_grid(GridWorldParams(w, h))
    traj = sample_episode(env, RngStream(seed))
    assert len(traj.states) - 1 == (w - 1) + (h - 1) + 1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_multichain_single_branch(m, n, seed):
    p = MultiChainParams(m, n)
    env = build_multi_chain(p)
    traj = sample_episode(env, RngStream(seed))
    chain = [s for s in traj.states if 1 <= s <= m * n]
    branches = {(s - 1) // n for s in chain}
    assert len(branches) == 1 and len(chain) == n
    assert p.bottleneck_state in traj.states


def test_tabular_features():
    env = build_multi_chain(MultiChainParams(1, 1))
    f = tabular_features(env)
    assert f(0).tolist() == [1.0, 0.0, 0.0]
    assert f(env.terminal).tolist() == [0.0, 0.0, 0.0]
    assert f(0) @ f(1) == 0.0
    assert f.is_one_hot


def test_feature_map_validation():
    with pytest.raises(InvalidInputError):
        FeatureMap(np.ones((3, 2)))
    with pytest.raises(InvalidInputError):
        FeatureMap(np.zeros(3))


def test_multichain_features_start_and_bottleneck():
    p = MultiChainParams(2, 2)
    f = multichain_features(p)
    assert f.dimension == 7
    start = f(p.start_state)
    assert np.flatnonzero(start).tolist() == [4, 5]
    bott = f(p.bottleneck_state)
    assert np.flatnonzero(bott).tolist() == [4, 6]
    assert not f.is_one_hot


def test_multichain_features_branches_differ_in_branch_bits():
    p = MultiChainParams(3, 4)
    f = multichain_features(p)
    for i in range(4):
        diff = np.flatnonzero(f(p.chain_state(0, i)) != f(p.chain_state(2, i)))
        assert diff.tolist() == [0, 2]


def test_multichain_feature_counts():
    p = MultiChainParams(4, 3)
    f = multichain_features(p)
    nnz = (f.matrix[:-1] != 0).sum(axis=1)
    assert nnz[p.start_state] == 2 and nnz[p.bottleneck_state] == 2
    assert all(nnz[p.chain_state(b, i)] == 3 for b in range(4) for i in range(3))
    assert not f(p.num_states).any()
