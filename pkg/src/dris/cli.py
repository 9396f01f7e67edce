"""Command-line entry point.

``dris run --config cfg.json [--out report.csv] [--format csv|json]
[--seed S] [--samples N] [--reps R]`` runs the configured sweep, prints a
summary table, and writes the report when an output path is given (flag
overrides beat config values). ``dris oracle --config cfg.json`` prints
quadrature reference rows in CSV form for targets of dimension <= 2.

Exit code 0 on success. On failure a one-line JSON error record of the form
``{"error": {"type": ..., "message": ...}}`` goes to stderr; config problems
exit with 2, runtime failures with 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .errors import ConfigError, DrisError
from .experiments import (
    csv_lines,
    emit_report,
    format_table,
    load_config,
    oracle_report,
    run_experiment,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dris",
        description="Worst-case rare-event probability estimation over a 2-Wasserstein ball.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured experiment sweep")
    run_p.add_argument("--config", required=True, help="path to the JSON experiment config")
    run_p.add_argument("--out", help="report output path (default: output_path from the config)")
    run_p.add_argument("--format", choices=("csv", "json"), help="report format (default: by output extension)")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--samples", type=int, help="override n_samples")
    run_p.add_argument("--reps", type=int, help="override n_macroreps")

    oracle_p = sub.add_parser("oracle", help="print quadrature reference rows (targets of dimension <= 2)")
    oracle_p.add_argument("--config", required=True, help="path to the JSON experiment config")
    return parser


def _run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["n_samples"] = args.samples
    if args.reps is not None:
        overrides["n_macroreps"] = args.reps
    if overrides:
        config = dataclasses.replace(config, **overrides)
    report = run_experiment(config)
    print(format_table(report))
    out = args.out or config.output_path
    if out:
        fmt = args.format or ("json" if out.endswith(".json") else "csv")
        emit_report(report, out, fmt)
        print(f"wrote {fmt} report to {out}")
    return 0


def _oracle(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    for line in csv_lines(oracle_report(config)):
        print(line)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        return _oracle(args)
    except ConfigError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return 2
    except (DrisError, OSError, ValueError) as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
