"""``cdqkd`` command line: one subcommand per experiment mode plus ``validate``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import __version__
from .config import MODES, ExperimentConfig, validate_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

_HELP = {
    "fig2": "CD key rate against channel length for each mu in source.mu_list",
    "fig3": "CD, decoy and GLLP rates against channel length at source.mu",
    "fig4": "optimal mu for the CD and decoy rates against channel length",
    "optimal-mu": "alias of fig4",
    "analytic-sweep": "fig2 and fig3 in one run",
    "table3": "expected vs simulated coincidences for each mu in source.mu_list",
    "monte-carlo": "one simulation at source.mu compared with the analytic model",
    "eve-roc": "abort rate against threshold under each Eve strategy",
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=_u64, help="master seed, overrides the config")
    common.add_argument("--out", metavar="DIR", help="output directory, overrides the config")
    common.add_argument("--threads", type=_positive, help="worker threads, overrides the config")
    common.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="set a dotted config key, e.g. source.mu=0.3"
    )

    parser = argparse.ArgumentParser(prog="cdqkd", description="Coincidence-detection QKD simulator and key-rate calculator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        sub.add_parser(mode, parents=[common], help=_HELP[mode])
    sub.add_parser("validate", parents=[common], help="check a config and print it fully defaulted")
    return parser


def load(args) -> ExperimentConfig:
    cfg = validate_config(args.config, args.override)
    updates = {}
    if args.command != "validate":
        updates["mode"] = args.command
    for name, value in (("seed", args.seed), ("output_dir", args.out), ("threads", args.threads)):
        if value is not None:
            updates[name] = value
    return replace(cfg, **updates)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
    except ConfigError as exc:
        print(f"cdqkd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK

    from .reports import run_experiment

    try:
        written = run_experiment(cfg)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"cdqkd: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
