"""Command line entry point: ``python -m etraces <command>``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 acceptance failure (``verify`` only).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import harness
from .errors import ConfigError, EnumerationBudgetError, InvalidInputError, NumericFailureError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4


def _resolve_config(arg: str) -> harness.RunConfig:
    # a bare name picks a packaged config
    if not Path(arg).exists() and arg in harness.list_canned():
        return harness.canned_config(arg)
    return harness.load_config(arg)


def _execute(args, sweep: bool) -> int:
    config = _resolve_config(args.config)
    fn = harness.sweep if sweep else harness.run
    result = fn(config, seed_offset=args.seed_offset, threads=args.threads)
    out = Path(args.out) if args.out else Path("results") / config.name
    harness.write_results(result, out)
    diverged = result.metadata["diverged_cells"]
    print(f"wrote {len(result.cells)} cell(s) x {len(result.seeds)} seed(s) to {out}")
    if diverged:
        print(f"non-finite final RMSE in cell(s): {', '.join(map(str, diverged))}", file=sys.stderr)
        # a diverging point inside a sweep is data; a diverging single run is a failure
        if not sweep or len(diverged) == len(result.cells):
            return EXIT_NUMERIC
    return EXIT_OK


def _oracle(args) -> int:
    try:
        raw = yaml.safe_load(Path(args.env_config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([(args.env_config, f"cannot read: {exc.strerror or exc}")]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([(args.env_config, f"not valid YAML: {exc}")]) from exc
    block = harness.environment_block(raw)
    if args.fixed_point is not None:
        what, lam = "fixed_point", args.fixed_point
    elif args.ztrace:
        what = "ztrace"
        lam = args.lam
        if lam is None:
            lam = (raw.get("learner") or {}).get("lam")
        if lam is None:
            raise ConfigError([("learner.lam", "--ztrace needs --lam or learner.lam in the config")])
    else:
        what, lam = "values", None
    header, rows = harness.oracle_table(block, what, lam)
    text = harness.csv_text(header, rows)
    if args.out:
        Path(args.out).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _verify(args) -> int:
    from .acceptance import run_all

    results = run_all(args.only or None)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def _emit(args) -> int:
    path = harness.emit(args.results_dir, args.kind, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etraces", description="TD(lambda) and expected-trace experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, helptext in (("run", "run one configuration"), ("sweep", "run every cell of a parameter grid")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="YAML config path, or the name of a packaged config")
        sp.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
        sp.add_argument("--out", help="output directory (default results/<name>)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")

    op = sub.add_parser("oracle", help="exact values, expected traces or TD fixed points as CSV")
    op.add_argument("env_config")
    mode = op.add_mutually_exclusive_group()
    mode.add_argument("--values", action="store_true", help="state values (default)")
    mode.add_argument("--ztrace", action="store_true", help="expected trace per state")
    mode.add_argument("--fixed-point", type=float, metavar="LAMBDA", help="values at the TD(LAMBDA) fixed point")
    op.add_argument("--lam", type=float, help="lambda for --ztrace")
    op.add_argument("--out", help="write CSV here instead of stdout")

    vp = sub.add_parser("verify", help="run the acceptance checks")
    vp.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")

    ep = sub.add_parser("emit", help="plot-ready CSV from a results directory")
    ep.add_argument("results_dir")
    ep.add_argument("--kind", required=True, choices=harness.PLOT_KINDS)
    ep.add_argument("--out", help="output file (default <results_dir>/<kind>.csv)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": lambda a: _execute(a, sweep=False),
        "sweep": lambda a: _execute(a, sweep=True),
        "oracle": _oracle,
        "verify": _verify,
        "emit": _emit,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidInputError, EnumerationBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
