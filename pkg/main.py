import argparse
import sys
from typing import Optional, Sequence

from src import __version__
from src.commands import fit_command, scaling_command, simulate_command
from src.config import settings
from src.utils import ArgumentError, ConfigError, CorrolabError, SimulationError, logger

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.app_name.lower(),
        description="Finite-element degradation model with domain-decomposed solvers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in [simulate_command, scaling_command, fit_command]:
        command.register(subparsers)
    return parser


def exit_code(exc: BaseException) -> int:
    """2 for configuration/argument errors, 1 for everything else"""
    if isinstance(exc, SimulationError):
        return exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ArgumentError)):
        return EXIT_USAGE
    return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CorrolabError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exit_code(exc)
    except Exception as exc:
        logger.error(f"Unhandled exception: {type(exc).__name__}: {exc}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
