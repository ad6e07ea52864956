"""Command-line front end: run scenarios, validate configs, query the
interference oracle.

Exit codes: 0 success, 1 validation failure, 2 aborted run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .links import mpi_penalty_oracle_db
from .scenario import emit_report, parse_config, run_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocsim",
        description="Deterministic optical-circuit-switched fabric simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed-override", type=int, default=None)
    run.add_argument("--format", choices=("json", "text"), default="json")
    run.add_argument("--out", type=Path, default=None)

    val = sub.add_parser("validate", help="validate a scenario config")
    val.add_argument("config", type=Path)

    oracle = sub.add_parser(
        "mpi-oracle", help="Monte Carlo interference penalty reference"
    )
    oracle.add_argument("--epsilon", type=float, required=True)
    oracle.add_argument("--modulation", choices=("NRZ", "PAM4"), required=True)
    oracle.add_argument("--samples", type=int, default=1_000_000)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--out", type=Path, default=None)

    return parser


def _load_and_parse(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return None
    return parse_config(text)


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "validate":
        parsed = _load_and_parse(args.config)
        if parsed is None:
            return 1
        if not parsed.ok:
            for v in parsed.violations:
                print(v, file=sys.stderr)
            return 1
        print("OK")
        return 0

    if args.command == "run":
        parsed = _load_and_parse(args.config)
        if parsed is None:
            return 1
        if not parsed.ok:
            for v in parsed.violations:
                print(v, file=sys.stderr)
            return 1
        config = parsed.config
        if args.seed_override is not None:
            config.seed = args.seed_override
        report = run_scenario(config)
        _write(emit_report(report, args.format), args.out)
        return 2 if report.aborted else 0

    if args.command == "mpi-oracle":
        if args.epsilon < 0:
            print("--epsilon must be >= 0", file=sys.stderr)
            return 1
        penalty = mpi_penalty_oracle_db(
            args.epsilon, args.modulation, samples=args.samples, seed=args.seed
        )
        _write(
            json.dumps({"penalty_p999_db": float(f"{penalty:.6g}")}) + "\n",
            args.out,
        )
        return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
