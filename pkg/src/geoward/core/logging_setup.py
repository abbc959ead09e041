"""
Geoward Logging Setup

Installs a rich handler on stderr so logs never mix with CSV/JSON written to
stdout or files.
"""

import logging
from typing import Any, Dict

from rich.console import Console
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

_HANDLER_NAME = "geoward-rich"


def setup_logging(level: str = "INFO") -> None:
    """Configure the ``geoward`` logger tree. Safe to call repeatedly."""
    root = logging.getLogger("geoward")
    root.setLevel(level.upper())
    if any(getattr(h, "name", None) == _HANDLER_NAME for h in root.handlers):
        return

    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
    )
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.propagate = False
    logger.debug(f"Logging initialised at {level.upper()}")


def get_logging_info() -> Dict[str, Any]:
    """Current logging configuration, for config-check output."""
    root = logging.getLogger("geoward")
    return {
        "level": logging.getLevelName(root.level),
        "handlers": [getattr(h, "name", type(h).__name__) for h in root.handlers],
    }
