"""Where does credit go when the first reward arrives?

On a 10x10 open grid only the bottom-right exit pays. We run TD(0),
TD(lambda) and ET(lambda) on the same episode stream until the first
rewarded episode and print which cells hold a nonzero value.

TD(0) credits one state. TD(lambda) credits the states on the rewarded path.
ET(lambda) also credits states from earlier episodes, because its learned
trace remembers how states tend to lead into each other.

    python3 demos/first_reward_on_open_grid.py [seed]
"""

import sys

import numpy as np

from etraces.envs import GridWorldParams, build_open_grid, sample_episode, tabular_features
from etraces.learners import Learner, LearnerConfig, StepSizeSchedule
from etraces.mdp import RngStream


def first_reward_values(env, feats, config, seed):
    learner = Learner(feats, config)
    rng = RngStream(seed)
    for k in range(1, 10_001):
        traj = sample_episode(env, rng, episode_id=k)
        learner.learn(traj)
        if traj.transitions[-1].reward > 0:
            return k, learner.value.values()
    raise RuntimeError("no reward within 10000 episodes")


def show(values, width, height):
    for r in range(height):
        print("  " + " ".join("#" if values[r * width + c] != 0 else "." for c in range(width)))


def main(seed=3):
    params = GridWorldParams(10, 10, 0.2)
    env = build_open_grid(params)
    feats = tabular_features(env)
    step = StepSizeSchedule("episode_power", 1.0, 0.5)
    for label, cfg in [
        ("TD(0)", LearnerConfig("td_lambda", 0.0, value_step=step)),
        ("TD(0.9)", LearnerConfig("td_lambda", 0.9, value_step=step)),
        ("ET(0.9)", LearnerConfig("et_lambda", 0.9, value_step=step)),
    ]:
        k, v = first_reward_values(env, feats, cfg, seed)
        print(f"{label}: first reward in episode {k}, {np.count_nonzero(v)} nonzero values")
        show(v, params.width, params.height)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
