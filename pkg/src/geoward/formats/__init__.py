"""
Geoward File Format Structures

Pydantic models for every JSON artifact geoward reads or writes.
"""

from .damage_plan import DamagePlan
from .reports import (
    CheckpointManifest,
    SpectrumSummary,
    TraceMetadata,
    RecoverySummary,
    ComparisonReport,
    RunManifest,
    json_schemas,
)

__all__ = [
    "DamagePlan",
    "CheckpointManifest",
    "SpectrumSummary",
    "TraceMetadata",
    "RecoverySummary",
    "ComparisonReport",
    "RunManifest",
    "json_schemas",
]
