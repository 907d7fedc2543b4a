"""ET(lambda, eta) with linear features settles near the TD(lambda*eta) fixed point.

We give the multi-chain a deliberately coarse feature map (a bias, a start
indicator and a scalar for how far along a chain the agent is). These
features cannot represent the true values, so each lambda has its own TD
fixed point. Training ET(0.9, eta) for a few values of eta moves the learned
values between the TD(0) and TD(0.9) solutions.

    python3 demos/fixed_point_interpolation.py
"""

import numpy as np

from etraces.batch import run_batch
from etraces.envs import FeatureMap, MultiChainParams, build_multi_chain
from etraces.learners import LearnerConfig, StepSizeSchedule
from etraces.oracles import td_fixed_point


def coarse_features(params):
    n = params.num_states
    x = np.zeros((n + 1, 3))
    x[:n, 0] = 1.0
    x[params.start_state, 1] = 1.0
    x[params.bottleneck_state, 2] = 1.0
    for b in range(params.num_chains):
        for i in range(params.chain_length):
            x[params.chain_state(b, i), 2] = (i + 1) / params.chain_length
    return FeatureMap(x)


def main(episodes=40_000, seeds=5):
    params = MultiChainParams(4, 4)
    env = build_multi_chain(params)
    feats = coarse_features(params)
    step = StepSizeSchedule("constant", 0.01)
    etas = (0.0, 0.5, 1.0)
    configs = [LearnerConfig("et_lambda_eta", 0.9, eta=eta, value_step=step) for eta in etas]
    weights = np.mean(
        [[r.weights for r in run_batch(env, feats, configs, episodes, seed, rmse_every=episodes)]
         for seed in range(seeds)],
        axis=0,
    )
    show = [params.chain_state(0, i) for i in range(params.chain_length)]
    print(f"values along a chain (states {show})")
    for eta, w in zip(etas, weights):
        learned = feats.matrix[:-1] @ w
        target = td_fixed_point(env, feats, 0.9 * eta).values
        print(f"  ET(0.9, {eta:.1f}) learned     {np.round(learned[show], 3)}")
        print(f"  TD({0.9 * eta:.2f}) fixed point {np.round(target[show], 3)}")


if __name__ == "__main__":
    main()
