"""
CLI progress utilities.

A status spinner on stderr for long commands (training, recovery). It is a
no-op when console output is disabled or stderr is not a terminal, so piped
and scripted runs stay clean.
"""

import sys
from contextlib import contextmanager
from typing import Iterator

from rich.console import Console

from ..config import config


@contextmanager
def status(message: str) -> Iterator[None]:
    """Show a spinner with ``message`` while the block runs."""
    if not (config.console_output and sys.stderr.isatty()):
        yield
        return
    with Console(stderr=True).status(message):
        yield
