"""Command-line front end: ``hydromeasure <subcommand> --config scenario.json``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .scenario import STAGES, Pipeline, ScenarioParseError, StageError, load_scenario, write_outputs

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NUMERICAL = 0, 1, 2, 3

SUBCOMMANDS = ("validate",) + STAGES + ("all",)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydromeasure", description="Run trajectory and measurement scenarios")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario file (JSON)")
    ap.add_argument("--out", help="output directory (default: the scenario's 'output' entry)")
    ap.add_argument("--seed", type=int, help="override the scenario seed")
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    say = (lambda *a: None) if args.quiet else print
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    try:
        scenario, errors = load_scenario(args.config, args.seed)
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.command == "validate":
        for e in errors:
            print(e)
        say("valid" if not errors else f"{len(errors)} violation(s)")
        return EXIT_INVALID if errors else EXIT_OK
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID

    stages = scenario.stages if args.command == "all" else (args.command,)
    missing = [s for s in stages if s not in STAGES]
    if missing:
        print(f"invalid: unknown stages {missing}", file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out) if args.out else Path(scenario.output)
    try:
        res = Pipeline(scenario, out_dir).run(stages)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyError as exc:
        print(f"invalid: missing config entry {exc}", file=sys.stderr)
        return EXIT_INVALID
    write_outputs(scenario, res, out_dir, stages)
    for key in sorted(res.metrics):
        say(f"{key} = {res.metrics[key]!r}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
