"""
Geoward File Tools

Checkpoint codec and CSV/JSON exporters.
"""

from .checkpoint import CheckpointCodec, load_checkpoint, save_checkpoint

__all__ = [
    "CheckpointCodec",
    "load_checkpoint",
    "save_checkpoint",
]
