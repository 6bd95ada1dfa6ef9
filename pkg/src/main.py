import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src import __version__
from src.commands import catalog, experiment
from src.utils.errors import ConfigError, UgwError

load_dotenv()


logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO"),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugw-local",
        description="Interacting diffusions on sparse graphs and their local equations",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    experiment.register(subparsers)
    catalog.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except UgwError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"I/O error: {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
