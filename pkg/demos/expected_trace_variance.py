"""Expected traces keep the mean update and shrink its variance.

On a small multi-chain we fix a value function, then compare the update
delta * e made by TD(lambda) at the bottleneck state with the update
delta * z made when the trace is replaced by its exact expectation.
Both moments come from exact enumeration, so no sampling noise is involved.

    python3 demos/expected_trace_variance.py
"""

import numpy as np

from etraces.envs import MultiChainParams, build_multi_chain, tabular_features
from etraces.learners import ValueFn
from etraces.oracles import exact_update_moments


def main():
    params = MultiChainParams(4, 3)
    env = build_multi_chain(params)
    feats = tabular_features(env)
    value = ValueFn(feats, np.random.default_rng(7).normal(size=feats.dimension))
    bottleneck = 1 + params.num_chains * params.chain_length
    print("lambda  |mean TD - mean ET|  total var TD  total var ET")
    for lam in (0.0, 0.5, 0.9, 1.0):
        m = exact_update_moments(env, feats, lam, value, bottleneck)
        gap = np.max(np.abs(m.td_mean - m.et_mean))
        print(f"{lam:6.2f}  {gap:19.2e}  {m.td_var.sum():12.5f}  {m.et_var.sum():12.5f}")


if __name__ == "__main__":
    main()
