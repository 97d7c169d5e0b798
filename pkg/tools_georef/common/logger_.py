"""
This module provides a logger setup utility for the georeferencing tools package.
It configures a logger with both file and console handlers, using a rotating file
handler for persistent logging and a rich handler for console output.
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler

_console = Console(stderr=True)


def setup_logger(name: str = __name__) -> logging.Logger:
    """
    Set up and return a configured logger instance.

    The logger writes DEBUG and higher level logs to a rotating file in the log
    directory (``GEOREF_LOG_DIR``, default ``logs``), and INFO and higher level
    logs to the console (stderr) through rich. Handlers are attached only once
    per logger name.

    Args:
        name (str): The name of the logger. Defaults to the module's __name__.

    Returns:
        logging.Logger: Configured logger instance.
    """
    logger__ = logging.getLogger(name)
    if logger__.handlers:
        return logger__

    logger__.setLevel(logging.DEBUG)
    logger__.propagate = False

    log_dir = Path(os.getenv("GEOREF_LOG_DIR", "logs"))
    log_dir.mkdir(parents=True, exist_ok=True)

    formater = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    file_handler = RotatingFileHandler(
        log_dir / "app.log",
        maxBytes=5_000_000,
        backupCount=5,
        encoding="utf-8",
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formater)

    console_handler = RichHandler(console=_console, show_path=False, markup=False)
    console_handler.setLevel(logging.INFO)

    logger__.addHandler(file_handler)
    logger__.addHandler(console_handler)

    return logger__


def set_console_level(level: int | str) -> None:
    """
    Change the console verbosity of every logger created by ``setup_logger``.

    Args:
        level (int | str): Logging level name or number
    """
    for logger_name in list(logging.root.manager.loggerDict):
        candidate = logging.getLogger(logger_name)
        for handler in candidate.handlers:
            if isinstance(handler, RichHandler):
                handler.setLevel(level)
