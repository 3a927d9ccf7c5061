"""Command-line entry point.

Every subcommand documents the exact CSV schema it writes in its help
text, so ``uotpool <command> --help`` is the authoritative description of
the output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiments import (
    ExperimentConfig,
    cmd_approx,
    cmd_bench,
    cmd_convergence,
    cmd_stability,
    cmd_train,
)

_COMMANDS = {
    "approx": (
        cmd_approx,
        "solve the limiting-weight regimes and compare plans against "
        "closed-form mean, max and attention targets",
        "Output files:\n"
        "  approx_<target>_<solver>.csv for target in {mean, max, attention}\n"
        "  and each configured solver, with columns:\n"
        "    row,col,target_plan,solved_plan,abs_error\n"
        "  approx_summary.csv with columns:\n"
        "    target,solver,max_abs_error\n"
        "  manifest.json",
    ),
    "stability": (
        cmd_stability,
        "sweep solver weights over decades and record plan health",
        "Output files:\n"
        "  stability.csv with columns:\n"
        "    solver,alpha0,alpha12,has_nan,total_mass\n"
        "  manifest.json",
    ),
    "convergence": (
        cmd_convergence,
        "record the mean objective as the iteration count grows",
        "Output files:\n"
        "  convergence.csv with columns:\n"
        "    solver,reg,k,objective\n"
        "  manifest.json",
    ),
    "bench": (
        cmd_bench,
        "time the pooling operators on a random batch",
        "Output files:\n"
        "  bench.csv with columns:\n"
        "    method,k,mean_ms,std_ms,median_ms\n"
        "  manifest.json",
    ),
    "train": (
        cmd_train,
        "train transport pooling on a synthetic bag-classification task",
        "Output files:\n"
        "  train.csv with columns:\n"
        "    epoch,loss\n"
        "  manifest.json",
    ),
}


def _seed_value(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uotpool",
        description="Experiments for pooling by unbalanced optimal transport.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text, epilog) in _COMMANDS.items():
        sub = subparsers.add_parser(
            name,
            help=help_text,
            description=help_text.capitalize() + ".",
            epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", metavar="PATH",
                         help="JSON config file; unknown keys are rejected")
        sub.add_argument("--seed", type=_seed_value, metavar="U64",
                         help="override the command's default seed")
        sub.add_argument("--out", metavar="DIR",
                         help="output directory (created if missing)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = (ExperimentConfig.from_json(args.config)
                  if args.config else ExperimentConfig())
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if overrides:
            config = dataclasses.replace(config, **overrides)
        files = _COMMANDS[args.command][0](config)
    except Exception as exc:  # surface one line, exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(files)} data files and manifest.json to {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
