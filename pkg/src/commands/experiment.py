import argparse
import logging
from pathlib import Path
from typing import Dict

from src.services.pipeline import CHECKS, EXIT_FAILED, parse_config, run

logger = logging.getLogger(__name__)

KINDS = ("simulate-graph", "simulate-tree", "solve-local")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value run configuration file")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", help="u64 master seed (overrides the config)")
    parser.add_argument(
        "--no-catalog", action="store_true", help="do not record the run in the catalog"
    )


def register(subparsers) -> None:
    for kind in KINDS:
        parser = subparsers.add_parser(kind, help=f"{kind.replace('-', ' ')} run")
        _common(parser)
        parser.set_defaults(handler=handle, kind=kind, check=None)

    verify = subparsers.add_parser("verify", help="run one named check")
    verify.add_argument("check", choices=sorted(CHECKS), help="check name")
    _common(verify)
    verify.set_defaults(handler=handle, kind="verify")


def overrides_from(args: argparse.Namespace) -> Dict[str, str]:
    """Command-line values that take precedence over the config file"""
    values = {"kind": args.kind}
    if args.check:
        values["check"] = args.check
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out is not None:
        values["out"] = args.out
    return values


def handle(args: argparse.Namespace) -> int:
    """Parse the config, execute the run and map its outcome to an exit status"""
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    config = parse_config(text, overrides_from(args))
    manifest = run(config, catalog=not args.no_catalog)

    verdict = manifest.verdict.value if manifest.verdict else "complete"
    print(f"{manifest.run_id}: {verdict} ({len(manifest.files)} files in {config.out})")
    for warning in manifest.warnings:
        print(f"  warning: {warning}")
    if manifest.exit_status == EXIT_FAILED:
        logger.warning(f"Verification {config.check} failed")
    return manifest.exit_status
