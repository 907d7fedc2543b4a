"""TD(lambda) against ET(lambda) on the multi-chain, across lambda.

Runs a small version of the packaged tabular sweep through the harness and
prints the best final RMSE per algorithm and lambda. The full sweep is
available as ``python -m etraces sweep multichain_tabular``.

    python3 demos/multichain_sweep.py
"""

from etraces import harness


def main():
    config = harness.parse_config({
        "name": "demo_multichain",
        "environment": {"name": "multi_chain", "params": {"num_chains": 16, "chain_length": 4}},
        "learner": {"value_step": {"kind": "visit_power", "alpha": 1.0, "d": 0.8}},
        "episodes": 256,
        "seeds": list(range(5)),
        "grid": {
            "learner.algorithm": ["td_lambda", "et_lambda"],
            "learner.lam": [0.0, 0.5, 0.9, 1.0],
            "learner.value_step.d": [0.5, 0.8, 1.0],
        },
        "select": {"minimize_over": ["learner.value_step.d"]},
    })
    result = harness.sweep(config)
    header, rows = harness.emit_plot_data(result, "final_vs_lambda")
    print("  ".join(f"{h:>12}" for h in header))
    for row in rows:
        print("  ".join(f"{x:>12.5f}" if isinstance(x, float) else f"{x!s:>12}" for x in row))


if __name__ == "__main__":
    main()
