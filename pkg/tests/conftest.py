import numpy as np
import pytest

from etraces.envs import (
    GridWorldParams,
    MultiChainParams,
    build_multi_chain,
    build_open_grid,
    multichain_features,
    tabular_features,
)


@pytest.fixture
def chain22():
    p = MultiChainParams(2, 2)
    env = build_multi_chain(p)
    return p, env, tabular_features(env), multichain_features(p)


@pytest.fixture
def chain44():
    p = MultiChainParams(4, 4)
    env = build_multi_chain(p)
    return p, env, tabular_features(env), multichain_features(p)


@pytest.fixture
def grid10():
    env = build_open_grid(GridWorldParams())
    return env, tabular_features(env)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
