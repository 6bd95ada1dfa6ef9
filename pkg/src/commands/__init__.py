"""Command-line subcommands"""

from src.commands import catalog, experiment

__all__ = ["catalog", "experiment"]
