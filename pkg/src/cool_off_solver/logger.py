import logging
import re
from inspect import currentframe
from multiprocessing import current_process
from pathlib import Path

from colorama import Fore, Style

from cool_off_solver import APP_NAME
from cool_off_solver.util.paths import get_log_dir, get_log_file_path

_logger = None
"""Application logger, set by `init_logging`."""

_MARKUP = (
    (re.compile(r"\*\*(.*?)\*\*"), "\033[38;5;229m"),
    (re.compile(r"__(.*?)__"), "\033[38;5;245m"),
)
"""Console styles for `**highlighted**` and `__dimmed__` message spans."""

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


def _paint(text, color):
    return f"{color}{text}{Style.RESET_ALL}"


def _origin(record):
    """Module stem of the caller, suffixed with the worker name inside pool processes."""
    module = Path(getattr(record, "caller_pathname", record.pathname)).stem
    process = current_process().name

    if process == "MainProcess":
        return module

    return f"{module}@{process.rsplit('-', 1)[-1]}"


class PlainFormatter(logging.Formatter):
    """Log file format: no colors, no markup."""

    def __init__(self):
        super().__init__(
            fmt="%(asctime)s.%(msecs)03d %(levelname)-8s %(origin)-12s %(message)s",
            datefmt=TIMESTAMP_FORMAT,
        )

    def format(self, record):
        message = record.getMessage()

        for pattern, _ in _MARKUP:
            message = pattern.sub(r"\1", message)

        record.msg, record.args = "  " * getattr(record, "indent", 0) + message, None
        record.origin = _origin(record)

        return super().format(record)


class ColoredFormatter(logging.Formatter):
    """
    Console format: colored timestamp, level and origin, indented message.

    Message spans wrapped in ** are highlighted and spans wrapped in __ are dimmed.
    """

    LEVEL_COLORS = {
        "DEBUG": Fore.GREEN,
        "INFO": Fore.BLUE,
        "WARNING": Fore.YELLOW,
        "ERROR": Fore.RED,
        "CRITICAL": Fore.MAGENTA,
    }

    def format(self, record):
        message = record.getMessage()

        for pattern, color in _MARKUP:
            message = pattern.sub(lambda match, color=color: _paint(match.group(1), color), message)

        parts = (
            "[" + _paint(self.formatTime(record, datefmt=TIMESTAMP_FORMAT), Fore.WHITE) + "]",
            _paint(f"{record.levelname:8}", self.LEVEL_COLORS.get(record.levelname, "")),
            _paint(f"{_origin(record):11}", Fore.CYAN + Style.BRIGHT),
            _paint("  " * getattr(record, "indent", 0) + message, Fore.WHITE + Style.BRIGHT),
        )

        return " ".join(parts)


def init_logging(quiet=None, verbose=None, log_to_file=True):
    """
    Configure the application logger for one command run.

    Console output is colored; the log file is truncated and gets the plain format.
    A second call replaces the handlers of the first.
    """
    global _logger

    _logger = logging.getLogger(APP_NAME)
    _logger.propagate = False
    _logger.setLevel(logging.ERROR if quiet else logging.DEBUG if verbose else logging.INFO)

    for handler in list(_logger.handlers):
        _logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setFormatter(ColoredFormatter())
    _logger.addHandler(console)

    if log_to_file:
        get_log_dir().mkdir(parents=True, exist_ok=True)

        log_file = logging.FileHandler(get_log_file_path(), mode="w")
        log_file.setFormatter(PlainFormatter())
        _logger.addHandler(log_file)


def _log(level, message, indent):
    # frame chain: _log <- log_* <- caller
    frame = currentframe()
    caller = frame.f_back.f_back if frame is not None else None
    pathname = caller.f_code.co_filename if caller is not None else __file__

    logger = _logger if _logger is not None else logging.getLogger(APP_NAME)
    logger.log(level, message, extra={"indent": indent, "caller_pathname": pathname})


def log_debug(message, indent=0):
    """Log a debug message at the given indentation level."""
    _log(logging.DEBUG, message, indent)


def log_info(message, indent=0):
    """Log an info message at the given indentation level."""
    _log(logging.INFO, message, indent)


def log_warning(message, indent=0):
    """Log a warning message at the given indentation level."""
    _log(logging.WARNING, message, indent)


def log_error(message, indent=0):
    """Log an error message at the given indentation level."""
    _log(logging.ERROR, message, indent)


def log_critical(message, indent=0):
    """Log a critical message at the given indentation level."""
    _log(logging.CRITICAL, message, indent)
