"""Command-line entry point: ``python -m app.main <subcommand>``."""

import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.cli import bench, data, evaluate, sample, train
from app.config import settings
from app.utils.exceptions import InvalidArgumentError, InvalidConfigurationError, NVSError
from app.utils.logger import detach_run_logs, log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises on bad usage instead of exiting."""

    def error(self, message: str):
        raise InvalidArgumentError(f"{self.prog}: {message}")


def build_parser() -> CliParser:
    parser = CliParser(prog="valid", description=settings.app_name)
    parser.add_argument("--version", action="version", version=settings.app_version)
    subparsers = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for module in (data, train, sample, evaluate, bench):
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and map failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except (InvalidArgumentError, InvalidConfigurationError, ValidationError) as e:
        log.error(f"Usage error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NVSError, OSError) as e:
        log.error(f"Run failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        detach_run_logs()


if __name__ == "__main__":
    raise SystemExit(main())
