"""Package logging.

Call sites use the module functions directly: ``log.debug(f"...")``.
"""

import logging
import sys
from typing import Optional

LOGGER_NAME = "bp_layer"

_logger = logging.getLogger(LOGGER_NAME)
_logger.addHandler(logging.NullHandler())
_console: Optional[logging.StreamHandler] = None


def setup_console(level: int = logging.INFO) -> None:
    """Attach one stderr handler; used by the command line only.

    Repeated calls reuse the handler and point it at the current stderr.
    """
    global _console
    if _console is None:
        _console = logging.StreamHandler(sys.stderr)
        _console.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s"))
        _logger.addHandler(_console)
    else:
        _console.setStream(sys.stderr)
    _logger.setLevel(level)


def debug(message: str, *args, **kwargs) -> None:
    _logger.debug(message, *args, **kwargs)


def info(message: str, *args, **kwargs) -> None:
    _logger.info(message, *args, **kwargs)


def warning(message: str, *args, **kwargs) -> None:
    _logger.warning(message, *args, **kwargs)
