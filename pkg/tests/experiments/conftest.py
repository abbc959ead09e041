"""
Golden log for the desk experiments.

A value missing from ``golden.json`` is pinned by the run that first
produces it; afterwards every run must land within the stated tolerance.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Optional

import pytest

logger = logging.getLogger(__name__)

GOLDEN_PATH = Path(__file__).with_name("golden.json")


class GoldenLog:
    def __init__(self, path: Path):
        self.path = path
        self.values: Dict[str, float] = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        self.pinned: Dict[str, float] = {}

    def check(self, name: str, value: float, rel: float = 0.1, abs: Optional[float] = None) -> None:
        value = float(value)
        if name not in self.values:
            logger.warning(f"Pinning golden value {name} = {value!r}")
            self.values[name] = value
            self.pinned[name] = value
            return
        expected = self.values[name]
        assert value == pytest.approx(expected, rel=rel, abs=abs), f"{name}: {value} drifted from pinned {expected}"

    def save(self) -> None:
        if self.pinned:
            self.path.write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def golden():
    log = GoldenLog(GOLDEN_PATH)
    yield log
    log.save()
