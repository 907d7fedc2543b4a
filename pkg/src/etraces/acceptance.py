"""Acceptance checks, one function per criterion.

Each check returns a :class:`CriterionResult` holding named sub-checks and
the wall-clock time. A criterion passes when every sub-check passes and it
finishes inside its time budget. ``python -m etraces verify`` prints one
line per criterion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import harness
from .envs import (
    GridWorldParams,
    MultiChainParams,
    build_multi_chain,
    build_open_grid,
    multichain_features,
    sample_episode,
    tabular_features,
)
from .learners import Learner, LearnerConfig, StepSizeSchedule, ValueFn, offline_td_lambda_update
from .mdp import RngStream, Trajectory, Transition
from .oracles import (
    exact_state_values,
    exact_update_moments,
    expected_mixture_trace,
    forward_view_reference,
    predecessor_features,
    td_fixed_point,
)
from .traces import MixtureTraceState, mixture_trace_closed_form, mixture_trace_step


@dataclass
class CriterionResult:
    number: int
    title: str
    budget: float
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    elapsed: float = 0.0

    def check(self, name: str, ok: bool, detail: str = ""):
        self.checks.append((name, bool(ok), detail))

    @property
    def within_budget(self) -> bool:
        return self.elapsed < self.budget

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok, _ in self.checks) and self.within_budget

    def failures(self) -> list[str]:
        out = [f"{n}: {d}" if d else n for n, ok, d in self.checks if not ok]
        if not self.within_budget:
            out.append(f"runtime {self.elapsed:.1f}s exceeds {self.budget:g}s")
        return out

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        head = f"[{status}] C{self.number} {self.title} ({self.elapsed:.1f}s, budget {self.budget:g}s)"
        if self.passed:
            return f"{head}: {len(self.checks)} checks"
        return f"{head}: " + "; ".join(self.failures())

    def report(self) -> str:
        lines = [self.line()]
        for n, ok, d in self.checks:
            lines.append(f"    {'ok ' if ok else 'BAD'} {n}" + (f"  ({d})" if d else ""))
        return "\n".join(lines)


def _timed(number: int, title: str, budget: float):
    def deco(fn: Callable[[CriterionResult], None]):
        def wrapper() -> CriterionResult:
            res = CriterionResult(number, title, budget)
            t0 = time.perf_counter()
            fn(res)
            res.elapsed = time.perf_counter() - t0
            return res

        wrapper.number = number
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper

    return deco


# ---------------------------------------------------------------------------


@_timed(1, "ET(lambda, 1) reproduces TD(lambda) bit for bit", 5.0)
def check_c1(res: CriterionResult):
    """Weights after every step agree exactly over 100 episodes."""
    grid = build_open_grid(GridWorldParams())
    mp = MultiChainParams(4, 4)
    chain = build_multi_chain(mp)
    setups = [
        ("open_grid/tabular", grid, tabular_features(grid), StepSizeSchedule("episode_power", 1.0, 0.5)),
        ("multi_chain/tabular", chain, tabular_features(chain), StepSizeSchedule("visit_power", 1.0, 0.8)),
        ("multi_chain/linear", chain, multichain_features(mp), StepSizeSchedule("constant", 0.03)),
    ]
    for name, env, feats, step in setups:
        for lam in (0.0, 0.5, 0.9, 1.0):
            mismatches = 0
            steps = 0
            for seed in range(3):
                td = Learner(feats, LearnerConfig("td_lambda", lam, value_step=step))
                et = Learner(feats, LearnerConfig("et_lambda_eta", lam, eta=1.0, value_step=step))
                rng = RngStream(seed)
                for k in range(1, 101):
                    traj = sample_episode(env, rng, episode_id=k)
                    td.begin_episode()
                    et.begin_episode()
                    for t in traj.transitions:
                        td.step(t)
                        et.step(t)
                        steps += 1
                        if not np.array_equal(td.value.w, et.value.w):
                            mismatches += 1
            res.check(f"{name} lambda={lam}", mismatches == 0, f"{mismatches} of {steps} steps differ")


@_timed(2, "mixture trace recursion equals its closed form", 1.0)
def check_c2(res: CriterionResult):
    """1000 random histories, length <= 50, random eta, gamma, lambda."""
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(1000):
        length = int(rng.integers(1, 51))
        dim = int(rng.integers(1, 6))
        eta, gamma, lam = rng.random(3)
        history = [(rng.normal(size=dim), rng.normal(size=dim)) for _ in range(length)]
        state = MixtureTraceState(np.zeros(dim), eta)
        for z, g in history:
            state = mixture_trace_step(state, z, gamma, lam, g)
        closed = mixture_trace_closed_form(history, gamma, lam, eta)
        worst = max(worst, float(np.abs(state.y - closed).max()))
    res.check("max |recursion - closed form| <= 1e-12", worst <= 1e-12, f"{worst:.3g}")


def _sampled_bottleneck_updates(env, feats, lam, value: ValueFn, z, bottleneck, n, seed):
    rng = RngStream(seed)
    x = feats.matrix
    td = np.empty((n, feats.dimension))
    et = np.empty((n, feats.dimension))
    v_b = value.value(bottleneck)
    for i in range(n):
        traj = sample_episode(env, rng, episode_id=i + 1)
        e = np.zeros(feats.dimension)
        g_prev = 0.0
        for t in traj.transitions:
            e = g_prev * lam * e + x[t.state]
            g_prev = t.next_discount
            if t.state == bottleneck:
                delta = t.reward + t.next_discount * value.value(t.next_state) - v_b
                td[i] = delta * e
                et[i] = delta * z
    return td, et


def _variance_se(samples: np.ndarray) -> np.ndarray:
    c = samples - samples.mean(axis=0)
    m2 = (c**2).mean(axis=0)
    m4 = (c**4).mean(axis=0)
    return np.sqrt(np.maximum(m4 - m2**2, 0.0) / len(samples))


@_timed(3, "expected-trace updates: same mean, lower variance", 30.0)
def check_c3(res: CriterionResult):
    """Exact moments at the bottleneck (m=4, n=2) and a 10^5-sample Monte Carlo cross-check."""
    mp = MultiChainParams(4, 2)
    env = build_multi_chain(mp)
    feats = tabular_features(env)
    b = mp.bottleneck_state
    value = ValueFn(feats, np.random.default_rng(7).normal(size=feats.dimension))
    n = 100_000
    for lam in (0.0, 0.5, 0.9, 1.0):
        mom = exact_update_moments(env, feats, lam, value, b)
        gap = float(np.abs(mom.et_mean - mom.td_mean).max())
        res.check(f"lambda={lam} exact mean(ET) = mean(TD)", gap <= 1e-10, f"max gap {gap:.3g}")
        slack = mom.td_var - mom.et_var
        res.check(f"lambda={lam} var(ET) <= var(TD)", bool((slack >= -1e-12).all()), f"min slack {slack.min():.3g}")
        if lam > 0:
            strict = int((slack > 1e-12).sum())
            res.check(f"lambda={lam} strict in >= m components", strict >= mp.num_chains,
                      f"{strict} strict components, m={mp.num_chains}")
        td_s, et_s = _sampled_bottleneck_updates(env, feats, lam, value, mom.z, b, n, seed=int(lam * 100) + 1)
        for label, s, mean, var in (("TD", td_s, mom.td_mean, mom.td_var), ("ET", et_s, mom.et_mean, mom.et_var)):
            se_m = s.std(axis=0, ddof=1) / np.sqrt(n)
            dev_m = np.abs(s.mean(axis=0) - mean)
            ok_m = np.where(se_m > 0, dev_m <= 3 * se_m, dev_m <= 1e-12)
            se_v = _variance_se(s)
            dev_v = np.abs(s.var(axis=0, ddof=1) - var)
            ok_v = np.where(se_v > 0, dev_v <= 3 * se_v, dev_v <= 1e-12)
            z_m = float(np.max(np.where(se_m > 0, dev_m / np.where(se_m > 0, se_m, 1), 0)))
            z_v = float(np.max(np.where(se_v > 0, dev_v / np.where(se_v > 0, se_v, 1), 0)))
            res.check(f"lambda={lam} sampled {label} mean within 3 SE", bool(ok_m.all()), f"max {z_m:.2f} SE")
            res.check(f"lambda={lam} sampled {label} variance within 3 SE", bool(ok_v.all()), f"max {z_v:.2f} SE")


@_timed(4, "linear ET(lambda, eta) converges to the TD(lambda*eta) fixed point", 60.0)
def check_c4(res: CriterionResult):
    """Final values averaged over the 10 seeds of the packaged fixed-point run.

    Each seed is 33334 episodes of 6 steps (200004 steps) with
    ``alpha_t = t^-0.8``. Per-seed errors are reported alongside.
    """
    cfg = harness.canned_config("multichain_fixed_point")
    result = harness.sweep(cfg)
    mp = MultiChainParams(**cfg.data["environment"]["params"])
    env = build_multi_chain(mp)
    feats = multichain_features(mp)
    xs = feats.matrix[:-1]
    steps = cfg.episodes * (mp.chain_length + 2)
    res.check("training length >= 2e5 steps", steps >= 200_000, f"{steps} steps")
    for cell in result.cells:
        lc = cell.cell.learner
        fp = td_fixed_point(env, feats, lc.lam * lc.eta)
        finals = np.array([xs @ r.weights for r in cell.runs])
        per_seed = np.abs(finals - fp.values).max(axis=1)
        err = float(np.abs(finals.mean(axis=0) - fp.values).max())
        res.check(
            f"eta={lc.eta}: seed-mean values within 1e-2 of TD({lc.lam * lc.eta:g}) fixed point",
            err <= 1e-2,
            f"max-norm {err:.4f}; per-seed max-norm {per_seed.min():.4f}..{per_seed.max():.4f}",
        )
    for env_t in (env, build_open_grid(GridWorldParams(6, 6))):
        tab = tabular_features(env_t)
        v = exact_state_values(env_t).v
        for lam in (0.0, 0.5, 0.9, 1.0):
            fp = td_fixed_point(env_t, tab, lam)
            err = float(np.abs(fp.values - v).max())
            res.check(f"{env_t.name} tabular TD({lam}) fixed point = v_pi", err <= 1e-10, f"{err:.3g}")


@_timed(5, "E[y_t | S_t] = E[e_t | S_t] for every eta", 10.0)
def check_c5(res: CriterionResult):
    mp = MultiChainParams(2, 2)
    env = build_multi_chain(mp)
    for fname, feats in (("tabular", tabular_features(env)), ("multichain", multichain_features(mp))):
        for lam in (0.5, 0.9, 1.0):
            e_mean = predecessor_features(env, feats, lam)
            for eta in (0.0, 0.25, 0.5, 0.75, 1.0):
                y_mean = expected_mixture_trace(env, feats, lam, eta)
                err = float(np.abs(y_mean - e_mean).max())
                res.check(f"{fname} lambda={lam} eta={eta}", err <= 1e-10, f"{err:.3g}")


def _random_episode(rng: np.random.Generator, num_states: int) -> Trajectory:
    length = int(rng.integers(1, 15))
    truncated = rng.random() < 0.2
    states = rng.integers(0, num_states, size=length + 1)
    ts = []
    for i in range(length):
        last = i == length - 1
        nxt = num_states if last and not truncated else int(states[i + 1])
        disc = 0.0 if last and not truncated else float(rng.uniform(0.5, 1.0))
        ts.append(Transition(int(states[i]), 0, float(rng.normal()), nxt, disc))
    return Trajectory(tuple(ts), truncated=truncated)


@_timed(6, "offline TD(lambda) backward view equals the lambda-return forward view", 5.0)
def check_c6(res: CriterionResult):
    from .envs import FeatureMap

    rng = np.random.default_rng(11)
    n, d = 6, 4
    x = np.vstack([rng.normal(size=(n, d)), np.zeros(d)])
    feats = FeatureMap(x)
    worst = 0.0
    for _ in range(100):
        traj = _random_episode(rng, n)
        value = ValueFn(feats, rng.normal(size=d))
        for lam in (0.0, 0.3, 0.5, 0.8, 0.9, 1.0):
            alpha = float(rng.uniform(0.01, 1.0))
            back = offline_td_lambda_update(value, traj, lam, alpha)
            fwd = forward_view_reference(traj, value, lam, alpha)
            worst = max(worst, float(np.abs(back - fwd).max()))
    res.check("100 episodes x 6 lambdas within 1e-10", worst <= 1e-10, f"max diff {worst:.3g}")


@_timed(7, "first rewarded episode on the open grid: ET(lambda) reaches earlier paths", 10.0)
def check_c7(res: CriterionResult):
    gp = GridWorldParams(10, 10, 0.2)
    env = build_open_grid(gp)
    feats = tabular_features(env)
    path_len = gp.width + gp.height - 1
    step = StepSizeSchedule("episode_power", 1.0, 0.5)
    configs = {
        "TD(0)": LearnerConfig("td_lambda", 0.0, value_step=step),
        "TD(0.9)": LearnerConfig("td_lambda", 0.9, value_step=step),
        "ET(0.9)": LearnerConfig("et_lambda", 0.9, value_step=step),
    }
    for seed in range(10):
        counts = {}
        first = None
        for name, cfg in configs.items():
            learner = Learner(feats, cfg)
            rng = RngStream(seed)
            for k in range(1, 10_001):
                traj = sample_episode(env, rng, episode_id=k)
                learner.learn(traj)
                if traj.transitions[-1].reward > 0:
                    break
            first = k
            counts[name] = int(np.count_nonzero(learner.value.values()))
        td0, tdl, etl = counts["TD(0)"], counts["TD(0.9)"], counts["ET(0.9)"]
        ok = td0 == 1 < tdl <= path_len
        if first >= 3:
            ok = ok and path_len < etl
        res.check(f"seed {seed} (first reward in episode {first})", ok,
                  f"nonzero values TD(0)={td0}, TD(0.9)={tdl}, ET(0.9)={etl}, path={path_len}")


def _sweep_subset(name: str, overrides: dict):
    data = dict(harness.canned_config(name).data)
    data = {**data, "grid": {**data["grid"], **overrides.get("grid", {})}}
    data["eval"] = {**data["eval"], "rmse_every": data["episodes"]}
    return harness.sweep(harness.parse_config(data))


def _best(cells, **match) -> float:
    vals = []
    for c in cells:
        s = harness._cell_summary(c.cell)
        if all(s[k] == v for k, v in match.items()) and np.isfinite(c.mean):
            vals.append(c.mean)
    return min(vals) if vals else float("nan")


@_timed(8, "tabular multi-chain: ET(lambda) below TD(lambda)", 600.0)
def check_c8(res: CriterionResult):
    ms = [8, 32, 128]
    result = _sweep_subset("multichain_tabular", {"grid": {"environment.params.num_chains": ms}})
    for m in ms:
        et, td = _best(result.cells, m=m, algorithm="et_lambda"), _best(result.cells, m=m, algorithm="td_lambda")
        res.check(f"m={m} best ET < best TD", et < td, f"ET {et:.5f} vs TD {td:.5f}")
    for lam in result.config.grid["learner.lam"]:
        et = _best(result.cells, m=32, algorithm="et_lambda", **{"lambda": lam})
        td = _best(result.cells, m=32, algorithm="td_lambda", **{"lambda": lam})
        res.check(f"m=32 lambda={lam} ET < TD", et < td, f"ET {et:.5f} vs TD {td:.5f}")


@_timed(9, "linear multi-chain: ET(lambda) below TD(lambda), eta interpolates", 900.0)
def check_c9(res: CriterionResult):
    ms = [4, 16, 64]
    result = _sweep_subset("multichain_linear", {"grid": {"environment.params.num_chains": ms}})
    for m in ms:
        et, td = _best(result.cells, m=m, algorithm="et_lambda"), _best(result.cells, m=m, algorithm="td_lambda")
        res.check(f"m={m} best ET < best TD", et < td, f"ET {et:.5f} vs TD {td:.5f}")
    eta_result = _sweep_subset("multichain_linear_eta", {})
    _, rows = harness.emit_plot_data(eta_result, "final_vs_eta")
    curve = {row[2]: row[3] for row in rows}
    res.check("eta curve finite", all(np.isfinite(v) for v in curve.values()),
              ", ".join(f"{k:g}:{v:.4f}" for k, v in sorted(curve.items())))
    res.check("eta=0 endpoint <= eta=1 endpoint", curve[0.0] <= curve[1.0],
              f"{curve[0.0]:.5f} vs {curve[1.0]:.5f}")


@_timed(10, "oracle health on the packaged environments", 1.0)
def check_c10(res: CriterionResult):
    grids = [GridWorldParams(), GridWorldParams(2, 1), GridWorldParams(6, 6, 0.5), GridWorldParams(3, 7, 0.0)]
    chains = [MultiChainParams(), MultiChainParams(1, 1), MultiChainParams(2, 2), MultiChainParams(128, 4),
              MultiChainParams(64, 16)]
    for gp in grids:
        ex = exact_state_values(build_open_grid(gp))
        res.check(f"grid {gp.width}x{gp.height} Bellman residual", ex.bellman_residual <= 1e-10,
                  f"{ex.bellman_residual:.3g}")
        err = float(np.abs(ex.v - gp.success_probability).max())
        res.check(f"grid {gp.width}x{gp.height} values = p", err <= 1e-12, f"{err:.3g}")
    for mp in chains:
        ex = exact_state_values(build_multi_chain(mp))
        res.check(f"multi-chain m={mp.num_chains} n={mp.chain_length} Bellman residual",
                  ex.bellman_residual <= 1e-10, f"{ex.bellman_residual:.3g}")
        err = abs(ex.v[mp.bottleneck_state] - 0.8)
        res.check(f"multi-chain m={mp.num_chains} n={mp.chain_length} bottleneck = 0.8", err <= 1e-12, f"{err:.3g}")


CHECKS = [check_c1, check_c2, check_c3, check_c4, check_c5, check_c6, check_c7, check_c8, check_c9, check_c10]


def run_all(only: list[int] | None = None) -> list[CriterionResult]:
    return [c() for c in CHECKS if only is None or c.number in only]
