"""Command-line entry points.

Subcommands: ``run`` executes a suite file; ``oracle`` runs one of the
brute-force self-checks (finite-difference gradients, exhaustive grouping,
double-loop metrics) and prints PASS/FAIL with the worst observed error;
``metrics`` summarises previously written record files.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 oracle
check failed.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, metrics, nn, oracles
from .data import ClientShard
from .hydra import assign_groups, exact_assignment, objective_value
from .protocols import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ORACLE = 3


def oracle_grad_check(nets: int = 20, seed: int = 0, tolerance: float = 1e-4):
    """Finite-difference check over random small nets (< 1000 parameters)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(nets):
        dim = int(rng.integers(2, 8))
        depth = int(rng.integers(0, 3))
        hidden = tuple(int(rng.integers(2, 12)) for _ in range(depth))
        labels = int(rng.integers(2, 6))
        stack = nn.mlp(dim, hidden, labels, rng)
        x = rng.normal(size=(int(rng.integers(2, 8)), dim))
        y = rng.integers(0, labels, size=x.shape[0])
        worst = max(worst, oracles.finite_difference_check(stack, x, y))
    return worst < tolerance, worst


def oracle_group_exact(clients: int = 6, groups: int = 2, instances: int = 50, seed: int = 0):
    """Greedy grouping vs exhaustive optimum on random label histograms.

    Fails if the greedy breaks the one-group-per-client constraint, the
    size-balance bound, or ever beats the exhaustive optimum.
    """
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    greedy_sum = exact_sum = 0.0
    for _ in range(instances):
        num_labels = max(groups, int(rng.integers(groups, groups + 3)))
        shards = [
            ClientShard(c, np.arange(0), rng.integers(0, 20, size=num_labels))
            for c in range(clients)
        ]
        mapping = tuple(int(g) for g in rng.integers(0, groups, size=num_labels))
        if len(set(mapping)) != groups:
            mapping = tuple(g % groups for g in range(num_labels))
        kwargs = {} if groups == num_labels else {"label_to_group": mapping}
        greedy = assign_groups(shards, groups, **kwargs)
        exact = exact_assignment(shards, groups, **kwargs)
        sizes = np.bincount(greedy.group_of, minlength=groups)
        if sizes.max() - sizes.min() > 1:
            return False, float("inf")
        g_val = objective_value(greedy, shards)
        e_val = objective_value(exact, shards)
        greedy_sum += g_val
        exact_sum += e_val
        worst_gap = max(worst_gap, g_val - e_val)
        if g_val > e_val + 1e-9:
            return False, worst_gap
    print(
        f"mean objective: greedy {greedy_sum / instances:.4f}, "
        f"exact {exact_sum / instances:.4f}"
    )
    return True, worst_gap


def oracle_metric_check(matrices: int = 1000, seed: int = 0, tolerance: float = 1e-15):
    """Vectorised metrics vs double-loop evaluation on random matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(matrices):
        rounds = int(rng.integers(2, 12))
        labels = int(rng.integers(1, 8))
        acc = rng.random((rounds, labels))
        worst = max(
            worst,
            abs(metrics.backward_transfer(acc) - oracles.brute_backward_transfer(acc)),
        )
        row = acc[-1]
        worst = max(worst, abs(metrics.performance_gap(row) - oracles.brute_performance_gap(row)))
        simplified = float((row.max() - row).mean())
        worst = max(worst, abs(metrics.performance_gap(row) - simplified))
    return worst <= tolerance, worst


ORACLES = {
    "grad-check": (
        oracle_grad_check,
        (("--nets", int, 20), ("--seed", int, 0), ("--tolerance", float, 1e-4)),
    ),
    "group-exact": (
        oracle_group_exact,
        (
            ("--clients", int, 6),
            ("--groups", int, 2),
            ("--instances", int, 50),
            ("--seed", int, 0),
        ),
    ),
    "metric-check": (
        oracle_metric_check,
        (("--matrices", int, 1000), ("--seed", int, 0), ("--tolerance", float, 1e-15)),
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sflsim")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment suite file")
    p_run.add_argument("suite", help="path to the suite JSON file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    p_run.add_argument(
        "--dump-schedules", action="store_true", help="also write per-round schedules"
    )

    p_oracle = sub.add_parser("oracle", help="run a brute-force self-check")
    oracle_sub = p_oracle.add_subparsers(dest="oracle", required=True)
    for name, (_, flags) in ORACLES.items():
        p = oracle_sub.add_parser(name)
        for flag, typ, default in flags:
            p.add_argument(flag, type=typ, default=default)

    p_metrics = sub.add_parser("metrics", help="summarise record files")
    p_metrics.add_argument("records", help="glob over *_meta.json record files")
    p_metrics.add_argument("--out", required=True, help="summary JSON path")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG

    try:
        if args.command == "run":
            suite = harness.load_suite(args.suite)
            written = harness.run_suite(
                suite, args.out, jobs=args.jobs, dump_schedules=args.dump_schedules
            )
            print(f"wrote {len(written)} files to {args.out}")
            return EXIT_OK
        if args.command == "oracle":
            fn, flags = ORACLES[args.oracle]
            kwargs = {flag.lstrip("-").replace("-", "_"): getattr(args, flag.lstrip("-"))
                      for flag, _, _ in flags}
            ok, worst = fn(**kwargs)
            print(f"{args.oracle}: {'PASS' if ok else 'FAIL'} (worst error {worst:.3e})")
            return EXIT_OK if ok else EXIT_ORACLE
        if args.command == "metrics":
            written = harness.summarize_records(args.records, args.out)
            print(f"wrote {len(written)} files")
            return EXIT_OK
        return EXIT_CONFIG
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # numeric/runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
