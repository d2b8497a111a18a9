"""Command line entry point.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .scenarios import DATA_ROOT_ENV, ConfigError, ScenarioError, read_config, run_scenario, validate_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pfnilm", description="Particle-filter load disaggregation scenarios.",
                epilog=f"Relative input paths resolve against ${DATA_ROOT_ENV} when set.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config", help="YAML/JSON scenario config (or a previous run.json)")
    run.add_argument("-o", "--output-dir", help="override the configured output directory")
    run.add_argument("--seed", type=int, help="override the configured seed")

    val = sub.add_parser("validate", help="check a scenario config without running it")
    val.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        doc = read_config(args.config)
    except (OSError, ScenarioError) as exc:
        print(f"pfnilm: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "validate":
        report, _ = validate_config(doc)
        for issue in report:
            print(issue)
        return EXIT_OK if report.ok else EXIT_USAGE

    try:
        record = run_scenario(doc, args.output_dir, args.seed)
    except ConfigError as exc:
        for issue in exc.report.errors:
            print(f"pfnilm: {issue}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, OSError, ValueError, RuntimeError) as exc:
        print(f"pfnilm: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {record['config']['output']} ({record['samples']} samples, seed {record['seed']})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
