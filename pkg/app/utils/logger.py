"""Logging configuration using loguru."""

import sys
from pathlib import Path
from typing import List, Union

from loguru import logger

from app.config import settings

RUN_LOG_NAME = "run.log"

FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"

# Handler ids of the per-run sinks attached by the CLI
_run_sinks: List[int] = []


def setup_logging():
    """Configure logging for the application."""
    # Remove default logger
    logger.remove()

    # Create logs directory if it doesn't exist
    Path(settings.log_file).parent.mkdir(parents=True, exist_ok=True)

    # Console logging on stderr; stdout carries tables and paths
    logger.add(
        sys.stderr,
        colorize=True,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=settings.log_level
    )

    # Global file logging across runs
    logger.add(
        settings.log_file,
        rotation="50 MB",
        retention="10 days",
        compression="zip",
        format=FILE_FORMAT,
        level=settings.log_level
    )

    return logger


def attach_run_log(run_dir: Union[str, Path]) -> Path:
    """Mirror every record into ``<run_dir>/run.log`` until detached."""
    path = Path(run_dir) / RUN_LOG_NAME
    _run_sinks.append(logger.add(path, format=FILE_FORMAT, level="DEBUG", enqueue=False))
    return path


def detach_run_logs() -> None:
    """Close the per-run sinks opened by :func:`attach_run_log`."""
    while _run_sinks:
        logger.remove(_run_sinks.pop())


# Export configured logger
log = setup_logging()
