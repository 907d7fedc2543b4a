"""Experiment configuration, sweeps, aggregation and CSV output.

A configuration is one YAML file::

    name: multichain_tabular
    environment:
      name: multi_chain            # or open_grid
      params: {num_chains: 8, chain_length: 4}
      features: tabular            # or multichain
    learner:
      algorithm: et_lambda
      lam: 0.9
      value_step: {kind: visit_power, alpha: 1.0, d: 0.8}
    episodes: 1024
    seeds: [0, 1, 2]
    eval: {rmse_every: 1024, snapshot_values_at: [], snapshot_first_reward: false}
    grid:                          # optional sweep axes, dotted paths
      learner.lam: [0.0, 0.5, 0.9]
    select:
      minimize_over: [learner.lam]

Every cell of the grid is run for every seed. Cells that differ only in
their learner block share one episode stream per seed and are learned in a
single batched pass.

Output directory layout (all CSVs: comma separated, LF, header row, floats
with 17 significant digits):

``results.csv``
    one row per cell: axis values, learner summary, mean/stderr of the final
    RMSE across seeds, and a ``best`` flag from the selection rule.
``curves.csv``
    ``cell, seed, episode, rmse``.
``snapshots.csv``
    ``cell, seed, episode, state, value``.
``weights.csv``
    ``cell, seed, index, weight``.
``metadata.json``
    config, config hash, seeds, timing and other run facts. This is the only
    file that changes between identical reruns.
"""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import io
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .batch import run_batch
from .envs import (
    EnvSpec,
    FeatureMap,
    GridWorldParams,
    MultiChainParams,
    build_multi_chain,
    build_open_grid,
    multichain_features,
    tabular_features,
)
from .errors import ConfigError, InvalidInputError
from .learners import LearnerConfig, StepSizeSchedule, TrainingRun
from .oracles import exact_state_values

PLOT_KINDS = ("learning_curve", "final_vs_m", "final_vs_lambda", "final_vs_eta", "value_heatmap")

_ENV_PARAMS = {
    "open_grid": (GridWorldParams, {"width": int, "height": int, "success_probability": float, "gamma": float}),
    "multi_chain": (
        MultiChainParams,
        {"num_chains": int, "chain_length": int, "terminal_plus_probability": float, "gamma": float},
    ),
}
_FEATURES = ("tabular", "multichain")
_STEP_KEYS = {"kind": str, "alpha": float, "d": float}
_LEARNER_KEYS = {
    "algorithm": str,
    "lam": float,
    "eta": float,
    "value_step": dict,
    "trace_step": dict,
    "z_rule": str,
    "z_target": str,
}
_TOP_KEYS = ("name", "environment", "learner", "episodes", "seeds", "eval", "grid", "select")
_DEFAULT_SELECT = ("learner.lam", "learner.value_step.d", "learner.value_step.alpha")


# ---------------------------------------------------------------------------
# configuration


def _defaults_for(dc) -> dict:
    return {k: getattr(dc(), k) for k in dc.__dataclass_fields__}


def _step_dict(s: StepSizeSchedule) -> dict:
    return {"kind": s.kind, "alpha": float(s.alpha), "d": float(s.d)}


class _Checker:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def fail(self, path: str, msg: str):
        self.errors.append((path, msg))

    def mapping(self, value, path: str) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
            return {}
        return value

    def unknown(self, block: dict, allowed: Iterable[str], path: str):
        for k in block:
            if k not in allowed:
                self.fail(f"{path}.{k}" if path else str(k), "unknown key")

    def scalar(self, value, kind, path: str):
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"expected a number, got {value!r}")
                return None
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(path, f"expected an integer, got {value!r}")
                return None
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                self.fail(path, f"expected true/false, got {value!r}")
                return None
            return value
        if not isinstance(value, str):
            self.fail(path, f"expected a string, got {value!r}")
            return None
        return value


def _normalize_step(ck: _Checker, raw, path: str) -> dict | None:
    block = ck.mapping(raw, path)
    ck.unknown(block, _STEP_KEYS, path)
    out = _step_dict(StepSizeSchedule())
    for k, kind in _STEP_KEYS.items():
        if k in block:
            v = ck.scalar(block[k], kind, f"{path}.{k}")
            if v is not None:
                out[k] = v
    try:
        StepSizeSchedule(**out)
    except InvalidInputError as exc:
        ck.fail(path, str(exc))
        return None
    return out


def _normalize_learner(ck: _Checker, raw, path: str = "learner") -> dict:
    block = ck.mapping(raw, path)
    ck.unknown(block, _LEARNER_KEYS, path)
    base = LearnerConfig()
    out: dict[str, Any] = {
        "algorithm": base.algorithm,
        "lam": base.lam,
        "eta": base.eta,
        "value_step": _step_dict(base.value_step),
        "trace_step": None,
        "z_rule": base.z_rule,
        "z_target": base.z_target,
    }
    for k, kind in _LEARNER_KEYS.items():
        if k not in block:
            continue
        if k in ("value_step", "trace_step"):
            if k == "trace_step" and block[k] is None:
                continue
            out[k] = _normalize_step(ck, block[k], f"{path}.{k}")
        else:
            v = ck.scalar(block[k], kind, f"{path}.{k}")
            if v is not None:
                out[k] = v
    try:
        learner_from_dict(out)
    except (InvalidInputError, TypeError) as exc:
        ck.fail(path, str(exc))
    return out


def _normalize_environment(ck: _Checker, raw, path: str = "environment") -> dict:
    block = ck.mapping(raw, path)
    ck.unknown(block, ("name", "params", "features"), path)
    name = block.get("name")
    if name not in _ENV_PARAMS:
        ck.fail(f"{path}.name", f"expected one of {sorted(_ENV_PARAMS)}, got {name!r}")
        return {"name": name, "params": {}, "features": block.get("features", "tabular")}
    cls, keys = _ENV_PARAMS[name]
    params = ck.mapping(block.get("params"), f"{path}.params")
    ck.unknown(params, keys, f"{path}.params")
    out_params = _defaults_for(cls)
    for k, kind in keys.items():
        if k in params:
            v = ck.scalar(params[k], kind, f"{path}.params.{k}")
            if v is not None:
                out_params[k] = v
    try:
        cls(**out_params)
    except (InvalidInputError, TypeError) as exc:
        ck.fail(f"{path}.params", str(exc))
    features = block.get("features", "tabular")
    if features not in _FEATURES:
        ck.fail(f"{path}.features", f"expected one of {list(_FEATURES)}, got {features!r}")
    elif features == "multichain" and name != "multi_chain":
        ck.fail(f"{path}.features", "multichain features need the multi_chain environment")
    return {"name": name, "params": out_params, "features": features}


def _normalize_base(ck: _Checker, raw: dict) -> dict:
    out: dict[str, Any] = {}
    name = raw.get("name", "experiment")
    out["name"] = ck.scalar(name, str, "name") or "experiment"
    out["environment"] = _normalize_environment(ck, raw.get("environment"))
    out["learner"] = _normalize_learner(ck, raw.get("learner"))

    episodes = ck.scalar(raw.get("episodes"), int, "episodes")
    if episodes is not None and episodes < 1:
        ck.fail("episodes", "must be >= 1")
    out["episodes"] = episodes

    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        ck.fail("seeds", "must be a non-empty list of integers")
        seeds = []
    clean = []
    for i, s in enumerate(seeds):
        v = ck.scalar(s, int, f"seeds[{i}]")
        if v is not None:
            if not -(2**63) <= v < 2**64:
                ck.fail(f"seeds[{i}]", "must fit in 64 bits")
            clean.append(v)
    out["seeds"] = clean

    ev = ck.mapping(raw.get("eval"), "eval")
    ck.unknown(ev, ("rmse_every", "snapshot_values_at", "snapshot_first_reward"), "eval")
    every = ck.scalar(ev.get("rmse_every", 1), int, "eval.rmse_every")
    if every is not None and every < 1:
        ck.fail("eval.rmse_every", "must be >= 1")
    snaps = ev.get("snapshot_values_at", [])
    if not isinstance(snaps, list):
        ck.fail("eval.snapshot_values_at", "must be a list of episode indices")
        snaps = []
    snap_clean = []
    for i, s in enumerate(snaps):
        v = ck.scalar(s, int, f"eval.snapshot_values_at[{i}]")
        if v is not None:
            if v < 1:
                ck.fail(f"eval.snapshot_values_at[{i}]", "episode indices start at 1")
            snap_clean.append(v)
    first = ck.scalar(ev.get("snapshot_first_reward", False), bool, "eval.snapshot_first_reward")
    out["eval"] = {"rmse_every": every, "snapshot_values_at": snap_clean, "snapshot_first_reward": bool(first)}
    return out


def _get(d: dict, dotted: str):
    cur: Any = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def _set(d: dict, dotted: str, value):
    parts = dotted.split(".")
    cur = d
    for part in parts[:-1]:
        if cur.get(part) is None:
            cur[part] = {}
        cur = cur[part]
    cur[parts[-1]] = value


def _grid_paths() -> set[str]:
    paths = {"episodes"}
    for k in _LEARNER_KEYS:
        if k in ("value_step", "trace_step"):
            paths |= {f"learner.{k}.{s}" for s in _STEP_KEYS}
        else:
            paths.add(f"learner.{k}")
    for _, keys in _ENV_PARAMS.values():
        paths |= {f"environment.params.{k}" for k in keys}
    paths |= {"environment.name", "environment.features"}
    return paths


def _expand(data: dict):
    axes = list(data["grid"])
    for i, combo in enumerate(itertools.product(*(data["grid"][a] for a in axes))):
        resolved = copy.deepcopy({k: v for k, v in data.items() if k not in ("grid", "select")})
        for a, v in zip(axes, combo):
            _set(resolved, a, v)
        yield i, dict(zip(axes, combo)), resolved


@dataclass(frozen=True)
class RunConfig:
    """A validated experiment configuration with every default filled in."""

    data: dict

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seeds(self) -> list[int]:
        return list(self.data["seeds"])

    @property
    def episodes(self) -> int:
        return self.data["episodes"]

    @property
    def grid(self) -> dict[str, list]:
        return self.data["grid"]

    @property
    def minimize_over(self) -> list[str]:
        return self.data["select"]["minimize_over"]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def cells(self) -> list["Cell"]:
        out = []
        for i, overrides, raw in _expand(self.data):
            ck = _Checker()
            resolved = _normalize_base(ck, raw)
            if ck.errors:
                raise ConfigError(ck.errors)
            out.append(Cell(i, overrides, resolved))
        return out

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data


@dataclass
class Cell:
    index: int
    overrides: dict
    resolved: dict

    @property
    def learner(self) -> LearnerConfig:
        return learner_from_dict(self.resolved["learner"])

    def group_key(self) -> str:
        """Cells with equal keys share environment, features and episode stream."""
        rest = {k: v for k, v in self.resolved.items() if k != "learner"}
        return json.dumps(rest, sort_keys=True)


def parse_config(raw: Any) -> RunConfig:
    """Validate a raw mapping (e.g. from YAML) into a :class:`RunConfig`.

    Raises :class:`ConfigError` listing every offending field.
    """
    ck = _Checker()
    if not isinstance(raw, dict):
        raise ConfigError([("", "configuration must be a mapping")])
    ck.unknown(raw, _TOP_KEYS, "")
    data = _normalize_base(ck, raw)

    grid_raw = ck.mapping(raw.get("grid"), "grid")
    allowed = _grid_paths()
    grid: dict[str, list] = {}
    for axis, values in grid_raw.items():
        if axis not in allowed:
            ck.fail(f"grid.{axis}", "not a sweepable parameter")
            continue
        if not isinstance(values, list) or not values:
            ck.fail(f"grid.{axis}", "must be a non-empty list")
            continue
        grid[axis] = list(values)
    data["grid"] = grid

    sel = ck.mapping(raw.get("select"), "select")
    ck.unknown(sel, ("minimize_over",), "select")
    if "minimize_over" in sel:
        over = sel["minimize_over"]
        if not isinstance(over, list) or not all(isinstance(x, str) for x in over):
            ck.fail("select.minimize_over", "must be a list of grid axes")
            over = []
        for x in over:
            if x not in grid:
                ck.fail("select.minimize_over", f"{x!r} is not a grid axis")
    else:
        over = [a for a in _DEFAULT_SELECT if a in grid]
    data["select"] = {"minimize_over": list(over)}

    if ck.errors:
        raise ConfigError(ck.errors)

    # every grid cell must itself be a valid configuration
    for i, overrides, raw_cell in _expand(data):
        sub = _Checker()
        _normalize_base(sub, raw_cell)
        for path, msg in sub.errors:
            ck.fail(f"grid cell {i} ({_label(overrides)}): {path}", msg)
        if len(ck.errors) > 20:
            break
    if ck.errors:
        raise ConfigError(ck.errors)
    return RunConfig(data)


def _label(overrides: dict) -> str:
    return ", ".join(f"{k}={v}" for k, v in overrides.items())


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([(str(path), f"cannot read: {exc.strerror or exc}")]) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([(str(path), f"not valid YAML: {exc}")]) from exc
    return parse_config(raw)


def canned_config(name: str) -> RunConfig:
    """One of the configurations shipped in ``etraces/configs``."""
    path = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not path.exists():
        raise ConfigError([(name, f"no canned config; available: {', '.join(list_canned())}")])
    return load_config(path)


def list_canned() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "configs").glob("*.yaml"))


def learner_from_dict(d: dict) -> LearnerConfig:
    trace = d.get("trace_step")
    return LearnerConfig(
        algorithm=d["algorithm"],
        lam=float(d["lam"]),
        eta=float(d["eta"]),
        value_step=StepSizeSchedule(**d["value_step"]),
        trace_step=None if trace is None else StepSizeSchedule(**trace),
        z_rule=d["z_rule"],
        z_target=d["z_target"],
    )


def build_environment(block: dict) -> tuple[EnvSpec, FeatureMap]:
    """Environment and feature map from a normalized ``environment`` block."""
    name, params = block["name"], block["params"]
    if name == "open_grid":
        env = build_open_grid(GridWorldParams(**params))
        return env, tabular_features(env)
    p = MultiChainParams(**params)
    env = build_multi_chain(p)
    feats = multichain_features(p) if block["features"] == "multichain" else tabular_features(env)
    return env, feats


# ---------------------------------------------------------------------------
# running


@dataclass
class CellResult:
    cell: Cell
    runs: list[TrainingRun]

    @property
    def final(self) -> np.ndarray:
        return np.array([r.rmse[-1] for r in self.runs])

    @property
    def diverged(self) -> int:
        return int((~np.isfinite(self.final)).sum())

    @property
    def mean(self) -> float:
        return float(np.mean(self.final))

    @property
    def stderr(self) -> float:
        return stderr(self.final)


def stderr(x: Sequence[float]) -> float:
    """Sample standard deviation over ``sqrt(n)``; ``nan`` for a single value."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return float("nan")
    return float(np.std(x, ddof=1) / np.sqrt(len(x)))


@dataclass
class RunResult:
    config: RunConfig
    cells: list[CellResult]
    seeds: list[int]
    metadata: dict = field(default_factory=dict)

    def best_cells(self) -> set[int]:
        return select_best(self.cells, self.config.minimize_over)


def select_best(cells: Sequence[CellResult], minimize_over: Sequence[str]) -> set[int]:
    """Indices of the lowest mean-final-RMSE cell in each group.

    Groups are defined by the grid axes not listed in ``minimize_over``.
    Cells with a non-finite mean never win.
    """
    best: dict[tuple, tuple[float, int]] = {}
    for c in cells:
        key = tuple((k, json.dumps(v)) for k, v in c.cell.overrides.items() if k not in minimize_over)
        m = c.mean
        if not np.isfinite(m):
            continue
        if key not in best or m < best[key][0]:
            best[key] = (m, c.cell.index)
    return {i for _, i in best.values()}


def _run_group(cells: list[Cell], seed: int, true_values: np.ndarray, env, feats) -> list[TrainingRun]:
    r = cells[0].resolved
    ev = r["eval"]
    return run_batch(
        env,
        feats,
        [c.learner for c in cells],
        r["episodes"],
        seed,
        true_values=true_values,
        rmse_every=ev["rmse_every"],
        snapshot_at=tuple(ev["snapshot_values_at"]),
        snapshot_first_reward=ev["snapshot_first_reward"],
    )


def execute(config: RunConfig, *, seed_offset: int = 0, threads: int = 1) -> RunResult:
    """Run every (cell, seed) pair. Output order is by cell, then seed."""
    if threads < 1:
        raise InvalidInputError("threads must be >= 1")
    t0 = time.perf_counter()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    seeds = [s + seed_offset for s in config.seeds]
    cells = config.cells()
    groups: dict[str, list[Cell]] = {}
    for c in cells:
        groups.setdefault(c.group_key(), []).append(c)

    tasks = []
    for members in groups.values():
        env, feats = build_environment(members[0].resolved["environment"])
        v = exact_state_values(env).v
        for si, seed in enumerate(seeds):
            tasks.append((members, si, seed, v, env, feats))

    def work(task):
        members, _, seed, v, env, feats = task
        return _run_group(members, seed, v, env, feats)

    if threads == 1:
        outputs = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(work, tasks))

    per_cell: dict[int, list[TrainingRun | None]] = {c.index: [None] * len(seeds) for c in cells}
    for (members, si, *_), runs in zip(tasks, outputs):
        for c, run in zip(members, runs):
            per_cell[c.index][si] = run
    results = [CellResult(c, per_cell[c.index]) for c in cells]

    meta = {
        "name": config.name,
        "config": config.data,
        "config_hash": config.hash(),
        "seeds": seeds,
        "seed_offset": seed_offset,
        "threads": threads,
        "started_at": started,
        "wall_clock_seconds": time.perf_counter() - t0,
        "rmse": "root mean squared error against exact state values, uniform over non-terminal states",
        "selection": {
            "rule": "minimum mean final RMSE across seeds within each group",
            "minimize_over": config.minimize_over,
        },
        "schedules": [_schedule_realization(c) for c in cells],
        "first_reward_episodes": {
            str(r.cell.index): [run.first_reward_episode for run in r.runs] for r in results
        },
        "diverged_cells": [r.cell.index for r in results if r.diverged],
    }
    return RunResult(config, results, seeds, meta)


def _schedule_realization(cell: Cell) -> dict:
    cfg = cell.learner
    ks = [1, 2, 10, 100, cell.resolved["episodes"]]
    out = {"cell": cell.index, "value_step": _step_dict(cfg.value_step), "value_step_at": {}}
    for k in ks:
        out["value_step_at"][str(k)] = cfg.value_step(k, k, k)
    if cfg.uses_expected_trace:
        out["trace_step"] = "running mean 1/n(s)" if cfg.z_rule == "empirical_mean" else _step_dict(cfg.beta_schedule)
    return out


def run(config: RunConfig, **kw) -> RunResult:
    """A single configuration (no grid)."""
    if config.grid:
        raise ConfigError([("grid", "run takes a configuration without grid axes; use sweep")])
    return execute(config, **kw)


def sweep(config: RunConfig, **kw) -> RunResult:
    """Cross product of all grid axes (a config without axes is a one-cell sweep)."""
    return execute(config, **kw)


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]):
    Path(path).write_bytes(csv_text(header, rows).encode("utf-8"))


def _cell_summary(cell: Cell) -> dict:
    cfg = cell.learner
    env = cell.resolved["environment"]
    return {
        "algorithm": cfg.algorithm,
        "environment": env["name"],
        "m": env["params"].get("num_chains"),
        "lambda": cfg.lam,
        "eta": cfg.effective_eta,
        "step_kind": cfg.value_step.kind,
        "step_parameter": cfg.value_step.parameter,
    }


def results_table(result: RunResult):
    axes = list(result.config.grid)
    best = result.best_cells()
    header = ["cell", *axes, "algorithm", "lambda", "eta", "step_kind", "step_parameter",
              "n_seeds", "n_diverged", "mean_final_rmse", "stderr_final_rmse", "best"]
    rows = []
    for r in result.cells:
        s = _cell_summary(r.cell)
        rows.append([r.cell.index, *[r.cell.overrides[a] for a in axes], s["algorithm"], s["lambda"], s["eta"],
                     s["step_kind"], s["step_parameter"], len(r.runs), r.diverged, r.mean, r.stderr,
                     r.cell.index in best])
    return header, rows


def write_results(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", *results_table(result))
    write_csv(
        out / "curves.csv",
        ["cell", "seed", "episode", "rmse"],
        ([r.cell.index, run.seed, int(k), float(e)] for r in result.cells for run in r.runs
         for k, e in zip(run.episodes, run.rmse)),
    )
    write_csv(
        out / "snapshots.csv",
        ["cell", "seed", "episode", "state", "value"],
        ([r.cell.index, run.seed, k, s, float(v)] for r in result.cells for run in r.runs
         for k in sorted(run.snapshots) for s, v in enumerate(run.snapshots[k])),
    )
    write_csv(
        out / "weights.csv",
        ["cell", "seed", "index", "weight"],
        ([r.cell.index, run.seed, j, float(w)] for r in result.cells for run in r.runs
         for j, w in enumerate(run.weights)),
    )
    (out / "metadata.json").write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_results(results_dir: str | Path) -> RunResult:
    """Rebuild a :class:`RunResult` from a directory written by :func:`write_results`."""
    d = Path(results_dir)
    try:
        meta = json.loads((d / "metadata.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([(str(d), "not a results directory (metadata.json missing)")]) from exc
    config = parse_config(meta["config"])
    seeds = meta["seeds"]
    cells = config.cells()

    def rows(name):
        with open(d / name, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))

    curves: dict[tuple[int, int], list] = {}
    for row in rows("curves.csv"):
        curves.setdefault((int(row["cell"]), int(row["seed"])), []).append((int(row["episode"]), float(row["rmse"])))
    snaps: dict[tuple[int, int], dict[int, dict[int, float]]] = {}
    for row in rows("snapshots.csv"):
        per = snaps.setdefault((int(row["cell"]), int(row["seed"])), {})
        per.setdefault(int(row["episode"]), {})[int(row["state"])] = float(row["value"])
    weights: dict[tuple[int, int], list] = {}
    for row in rows("weights.csv"):
        weights.setdefault((int(row["cell"]), int(row["seed"])), []).append((int(row["index"]), float(row["weight"])))
    firsts = meta.get("first_reward_episodes", {})

    results = []
    for c in cells:
        runs = []
        for si, seed in enumerate(seeds):
            key = (c.index, seed)
            series = sorted(curves.get(key, []))
            sn = {k: np.array([v[s] for s in sorted(v)]) for k, v in snaps.get(key, {}).items()}
            runs.append(TrainingRun(
                config=c.learner,
                seed=seed,
                episodes=np.array([k for k, _ in series], dtype=np.int64),
                rmse=np.array([e for _, e in series]),
                weights=np.array([w for _, w in sorted(weights.get(key, []))]),
                snapshots=sn,
                first_reward_episode=firsts.get(str(c.index), [None] * len(seeds))[si],
            ))
        results.append(CellResult(c, runs))
    return RunResult(config, results, seeds, meta)


# ---------------------------------------------------------------------------
# plot data

PLOT_COLUMNS = {
    "learning_curve": ["cell", "algorithm", "lambda", "eta", "seed", "episode", "rmse"],
    "final_vs_m": ["algorithm", "m", "mean_rmse", "stderr", "best_lambda", "best_d"],
    "final_vs_lambda": ["algorithm", "m", "lambda", "mean_rmse", "stderr", "best_d"],
    "final_vs_eta": ["m", "lambda", "eta", "mean_rmse", "stderr", "best_d"],
    "value_heatmap": ["cell", "algorithm", "lambda", "seed", "episode", "row", "col", "value"],
}


def _algo_label(s: dict) -> str:
    if s["algorithm"] == "et_lambda_eta":
        return f"et_lambda_eta:{fmt(s['eta'])}"
    return s["algorithm"]


def _best_by(cells: Sequence[CellResult], key) -> list[tuple[tuple, CellResult]]:
    """Lowest-mean cell per key, in order of first appearance. Groups with
    no finite cell report their first cell (with its non-finite mean)."""
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        groups.setdefault(key(_cell_summary(c.cell)), []).append(c)
    out = []
    for k, members in groups.items():
        finite = [c for c in members if np.isfinite(c.mean)]
        out.append((k, min(finite, key=lambda c: c.mean) if finite else members[0]))
    return out


def emit_plot_data(result: RunResult, kind: str) -> tuple[list[str], list[list]]:
    """Long-format table for one plot kind. Best cells minimize mean final RMSE
    over every swept parameter not in the row key; ``best_d`` is the step-size
    exponent for decaying schedules and the constant step size otherwise."""
    if kind not in PLOT_COLUMNS:
        raise InvalidInputError(f"unknown kind {kind!r}; expected one of {list(PLOT_KINDS)}")
    header = PLOT_COLUMNS[kind]
    cells = result.cells
    if kind == "learning_curve":
        rows = []
        for c in cells:
            s = _cell_summary(c.cell)
            for run in c.runs:
                for k, e in zip(run.episodes, run.rmse):
                    rows.append([c.cell.index, _algo_label(s), s["lambda"], s["eta"], run.seed, int(k), float(e)])
        return header, rows
    if kind == "value_heatmap":
        rows = []
        for c in cells:
            env_block = c.cell.resolved["environment"]
            if env_block["name"] != "open_grid":
                raise InvalidInputError("value_heatmap needs open_grid results")
            width = env_block["params"]["width"]
            s = _cell_summary(c.cell)
            for run in c.runs:
                for k in sorted(run.snapshots):
                    for state, v in enumerate(run.snapshots[k]):
                        rows.append([c.cell.index, _algo_label(s), s["lambda"], run.seed, k,
                                     state // width, state % width, float(v)])
        if not rows:
            raise InvalidInputError("no value snapshots recorded; set eval.snapshot_values_at or snapshot_first_reward")
        return header, rows
    if any(c.cell.resolved["environment"]["name"] != "multi_chain" for c in cells) and kind != "final_vs_lambda":
        raise InvalidInputError(f"{kind} needs multi_chain results")
    if kind == "final_vs_m":
        best = _best_by(cells, lambda s: (_algo_label(s), s["m"]))
        return header, [[k[0], k[1], c.mean, c.stderr, c.cell.learner.lam, c.cell.learner.value_step.parameter]
                        for k, c in best]
    if kind == "final_vs_lambda":
        best = _best_by(cells, lambda s: (_algo_label(s), s["m"], s["lambda"]))
        return header, [[k[0], k[1], k[2], c.mean, c.stderr, c.cell.learner.value_step.parameter] for k, c in best]
    best = _best_by(cells, lambda s: (s["m"], s["lambda"], s["eta"]))
    return header, [[k[0], k[1], k[2], c.mean, c.stderr, c.cell.learner.value_step.parameter] for k, c in best]


def emit(results_dir: str | Path, kind: str, out: str | Path | None = None) -> Path:
    result = load_results(results_dir)
    header, rows = emit_plot_data(result, kind)
    path = Path(out) if out is not None else Path(results_dir) / f"{kind}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(path, header, rows)
    return path


# ---------------------------------------------------------------------------
# oracle export


def oracle_table(block: dict, what: str, lam: float | None = None) -> tuple[list[str], list[list]]:
    """Exact quantities for an environment as a table keyed by state id.

    ``what`` is ``values`` (v_pi), ``ztrace`` (expected trace per state, one
    column per feature) or ``fixed_point`` (values of the TD(lam) fixed point).
    """
    from .oracles import predecessor_features, td_fixed_point

    env, feats = build_environment(block)
    if what == "values":
        v = exact_state_values(env).v
        return ["state", "value"], [[s, float(x)] for s, x in enumerate(v)]
    if lam is None or not 0.0 <= lam <= 1.0:
        raise InvalidInputError("lambda in [0, 1] is required")
    if what == "ztrace":
        z = predecessor_features(env, feats, lam)
        return ["state", *[f"z{j}" for j in range(feats.dimension)]], [[s, *map(float, row)] for s, row in enumerate(z)]
    if what == "fixed_point":
        fp = td_fixed_point(env, feats, lam)
        return ["state", "value"], [[s, float(x)] for s, x in enumerate(fp.values)]
    raise InvalidInputError(f"unknown oracle output {what!r}")


def environment_block(raw: Any) -> dict:
    """Normalized environment block from either a full run config or a bare
    mapping with an ``environment`` key."""
    ck = _Checker()
    if not isinstance(raw, dict) or "environment" not in raw:
        raise ConfigError([("environment", "missing")])
    block = _normalize_environment(ck, raw["environment"])
    if ck.errors:
        raise ConfigError(ck.errors)
    return block
