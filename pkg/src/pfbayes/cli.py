"""Command-line entry point: ``pfbayes {forward,invert,homogeneous,sweep}``.

On failure the last line on stderr is a JSON object with ``error`` and
``message`` keys and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .experiments import COMMANDS, ConfigError, ExperimentConfig, load_config

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfbayes", description="Phase-field fracture forward runs and Bayesian calibration.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file (or a metadata sidecar to rerun)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", default="out", help="directory for all artifacts")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict({})
        if args.seed is not None:
            cfg.seed = args.seed
        COMMANDS[args.command](cfg, args.out_dir)
    except (ConfigError, FileNotFoundError) as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure as a machine-readable line
        _fail(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "command": args.command, "out_dir": args.out_dir}))
    return 0


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
