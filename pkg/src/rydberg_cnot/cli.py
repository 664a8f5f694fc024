"""Command line entry point: ``rydberg-cnot <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentConfig, parse_config
from .noise import ESTIMATORS
from .protocols import ProtocolSpec

COMMANDS = ("truth-table", "bell", "parity-scan", "gap-scan", "p2-check", "replay-fixture")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override physics.rngSeed")
    common.add_argument("--trials", type=int, help="override physics.trials")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", action="append", choices=harness.FORMATS,
                        help="output format (repeatable); default all")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("--protocol", choices=("HCZ_CNOT", "AS_CNOT", "CZ", "PREP", "BELL_B1", "BELL_B2"),
                        help="override protocol.name")
    common.add_argument("--records", action="store_true", help="also write per-trial trials.csv")
    common.add_argument("--estimator", choices=ESTIMATORS,
                        help="sampled outcomes or exact per-trial probabilities "
                             "(default: expected for bell/parity-scan, sampled otherwise)")

    parser = argparse.ArgumentParser(prog="rydberg-cnot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "replay-fixture":
            p.add_argument("fixture", nargs="?", type=Path, help="fixture JSON (default: packaged values)")
    return parser


def resolve(args) -> ExperimentConfig:
    if args.config is not None:
        exp = harness.load_config(args.config)
    else:
        exp = parse_config({})
    phys = {}
    if args.seed is not None:
        phys["rng_seed"] = args.seed
    if args.trials is not None:
        phys["trials"] = args.trials
    try:
        physics = exp.physics.replace(**phys) if phys else exp.physics
    except ValueError as exc:
        raise ConfigError("physics", str(exc)) from None
    protocol = exp.protocol
    if args.protocol is not None:
        protocol = ProtocolSpec(args.protocol, {k: v for k, v in protocol.parameters.items()
                                                if k in ProtocolSpec.allowed(args.protocol)})
    return replace(exp, physics=physics, protocol=protocol,
                   output=args.out if args.out is not None else exp.output,
                   formats=tuple(args.format) if args.format else exp.formats)


def run(args) -> dict:
    exp = resolve(args)
    cmd = args.command
    est = {} if args.estimator is None else {"estimator": args.estimator}
    if args.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    if cmd == "truth-table":
        return harness.run_truth_table(exp, args.workers, args.records, **est)
    if cmd == "bell":
        return harness.run_bell(exp, args.workers, args.records, **est)
    if cmd == "parity-scan":
        if exp.scan is None:
            exp = replace(exp, scan=harness.ScanSpec("analysisPhase", 0.0, 3.0, 16))
        return harness.run_bell(exp, args.workers, args.records, **est)
    if cmd == "gap-scan":
        return harness.run_gap_scan(exp, args.workers, **est)
    if cmd == "p2-check":
        return harness.run_p2_check(exp, args.workers)
    return harness.run_replay(exp, args.fixture)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args)
    except ConfigError as exc:
        _error("ConfigError", str(exc), exc.field)
        return 2
    except (ValueError, OSError) as exc:
        _error(type(exc).__name__, str(exc))
        return 1
    for k, v in summary.items():
        print(f"{k}: {harness._text(v)}")
    return 0


def _error(kind: str, message: str, field: str | None = None):
    record = {"error": kind, "message": message}
    if field is not None:
        record["field"] = field
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
