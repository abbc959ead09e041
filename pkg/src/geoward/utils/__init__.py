"""
Geoward Utility Functions
"""

from .cli_progress import status

__all__ = ["status"]
