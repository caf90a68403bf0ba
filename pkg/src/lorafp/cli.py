"""Command-line entry point.

Subcommands: gen-fleet, gen-dataset, augment, train, enroll, revoke,
identify, evaluate. Each takes --config (JSON), --seed (overrides the
config's seed) and --out, echoes its fully resolved configuration, and
exits 0 on success. Failure exit codes: 2 configuration, 3 data,
4 version mismatch, 5 numerical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import (ConfigError, ContractError, IntegrityError, LorafpError,
                     NumericalError, VersionMismatchError)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERSION = 4
EXIT_NUMERICAL = 5

_COMMANDS = {
    "gen-fleet": harness.gen_fleet,
    "gen-dataset": harness.gen_dataset,
    "augment": harness.augment_cmd,
    "train": harness.train_cmd,
    "enroll": harness.enroll_cmd,
    "revoke": harness.revoke_cmd,
    "identify": harness.identify_cmd,
    "evaluate": harness.evaluate_cmd,
}
# Commands whose --out is a directory rather than a single file.
_DIR_OUTPUT = {"gen-dataset", "augment", "evaluate"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorafp",
        description="Simulated LoRa radio-fingerprinting experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", required=True, help="output file or directory")
    return parser


def _echo_path(command: str, out: str) -> Path:
    out_path = Path(out)
    if command in _DIR_OUTPUT:
        return out_path / "resolved_config.json"
    return Path(str(out_path) + ".config.json")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG

    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    try:
        resolved, summary = _COMMANDS[args.command](config, seed, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, IntegrityError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except VersionMismatchError as err:
        print(f"version error: {err}", file=sys.stderr)
        return EXIT_VERSION
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LorafpError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    echo = {"command": args.command, "resolved_config": resolved, "summary": summary}
    text = json.dumps(echo, indent=2, default=str)
    print(text)
    echo_path = _echo_path(args.command, args.out)
    try:
        echo_path.parent.mkdir(parents=True, exist_ok=True)
        echo_path.write_text(text)
    except OSError:
        pass  # echo file is best-effort; stdout already has it
    return 0


if __name__ == "__main__":
    sys.exit(main())
