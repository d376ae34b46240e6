"""Command-line entry point: ``birkhoff-girsanov run <scenario> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .conditioning import PreconditionError
from .scenarios import (SCENARIOS, ConfigError, ScenarioConfig, load_config_file, run,
                        write_artifacts)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("birkhoff_girsanov")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="birkhoff-girsanov",
                                     description="Run a reproducible verification scenario.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario and write its artifacts")
    r.add_argument("scenario", choices=SCENARIOS)
    r.add_argument("--paths", type=int, help="Monte Carlo path count M")
    r.add_argument("--grid", type=int, help="number of time steps K")
    r.add_argument("--horizon", type=float, help="horizon T")
    drift = r.add_mutually_exclusive_group()
    drift.add_argument("--q", type=float, help="constant drift / shift rate")
    drift.add_argument("--r-spec", dest="r_spec", help="named drift factor r(t)")
    r.add_argument("--bins", type=int, help="quantile bins per filtration time")
    r.add_argument("--confidence", type=float, help="family-wise confidence level")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    r.add_argument("--slots", type=int, help="draws of w_T for the conditional example")
    r.add_argument("--out", help="output directory (default: out)")
    r.add_argument("--config", help="JSON file of option values")
    r.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cli_values = {k: getattr(args, k) for k in
                  ("paths", "grid", "horizon", "q", "r_spec", "bins", "confidence", "seed",
                   "threads", "slots", "out")}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        file_values.pop("scenario", None)
        cfg = ScenarioConfig.build(args.scenario, file_values, cli_values)
    except (ConfigError, PreconditionError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"birkhoff-girsanov: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s with %s", cfg.scenario, cfg.record())
    try:
        result = run(cfg)
    except PreconditionError as exc:
        print(f"birkhoff-girsanov: precondition failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_artifacts(result, cfg.out)
    for s in result.report.summary():
        print(f"{'PASS' if s['pass'] else 'FAIL'}  {s['name']}")
    if not result.passed:
        print(f"failed stages: {', '.join(result.report.failed)}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
