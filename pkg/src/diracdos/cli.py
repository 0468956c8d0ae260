"""Command-line entry point.

One subcommand per experiment kind; the subcommand must match the
config's own kind so a file cannot be run as something it is not.
"""

import argparse
import json
import sys

from . import models, runner
from .config import KINDS, load_config
from .errors import ConfigError, DiracDosError


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dirac-dos",
        description="Experiment runner for gapped random operators.")
    parser.add_argument("--list-models", action="store_true",
                        help="print the model registry and exit")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>")
    for kind in KINDS:
        p = sub.add_parser(kind, help="run a %r experiment" % kind)
        p.add_argument("--config", required=True, help="TOML or JSON config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: config, then "
                            "DIRAC_DOS_JOBS, then 1)")
        p.add_argument("--out", default=None,
                       help="override the output directory")
    return parser


def _fail(exc):
    payload = {"error": type(exc).__name__, "message": str(exc),
               "exit_code": exc.exit_code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return exc.exit_code


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.list_models:
        for spec in models.list_models():
            print("%-16s %s" % (spec.name, spec.description))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return _fail(ConfigError("no subcommand given"))
    try:
        cfg = load_config(args.config)
        if cfg.kind != args.command:
            raise ConfigError("config kind %r does not match subcommand %r"
                              % (cfg.kind, args.command))
        overrides = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            overrides["seed"] = args.seed
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("jobs must be at least 1")
            overrides["jobs"] = args.jobs
        if args.out is not None:
            overrides["out"] = args.out
        if overrides:
            cfg = cfg.replace(**overrides)
    except DiracDosError as exc:
        return _fail(exc)
    return runner.run(cfg)


if __name__ == "__main__":
    sys.exit(main())
