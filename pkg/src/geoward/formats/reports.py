"""
Geoward Report Structures

Pydantic models for every JSON document geoward writes. ``json_schemas()``
exports their schemas so downstream scripts can validate outputs.
"""

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

from ..model.network import NetworkSpec


class CheckpointManifest(BaseModel):
    """JSON half of a checkpoint; the weights live in a sidecar blob."""

    format_version: int = Field(default=1)
    layer_sizes: Tuple[int, ...]
    hidden_activation: str
    output_mode: str
    weight_count: int = Field(ge=1)
    dataset_fingerprint: Optional[str] = Field(default=None)
    blob: str = Field(description="Sidecar file name: weight_count little-endian float64 values")

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            layer_sizes=self.layer_sizes,
            hidden_activation=self.hidden_activation,  # type: ignore[arg-type]
            output_mode=self.output_mode,  # type: ignore[arg-type]
        )


class SpectrumSummary(BaseModel):
    """Scalar summary of a metric spectrum."""

    n: int
    rho: float = Field(description="Fraction of eigenvalues at or above the threshold")
    lambda_1: float
    lambda_min: float
    trace: float
    threshold: float
    vulnerable_count: int
    resilient_count: int
    rho_lambda: float = Field(description="sum(lambda) / (n * lambda_1)")


class TraceMetadata(BaseModel):
    """Sidecar JSON for a path-trace CSV."""

    kind: Literal["naive_linear", "stepwise_deletion", "geodesic", "fine_tune"]
    samples: int
    plan: Optional[Dict[str, Any]] = None
    seeds: Dict[str, int] = Field(default_factory=dict)
    batch_ids: List[int] = Field(default_factory=list)
    extra: Dict[str, Any] = Field(default_factory=dict)


class RecoverySummary(BaseModel):
    """Outcome of one geodesic recovery (or one β branch of a sweep)."""

    beta: float
    steps: int
    total_energy: float
    path_length: float = Field(default=0.0, description="Integral of the square root of the speed")
    final_accuracy: float
    mean_accuracy: float
    work_epochs: float
    converged: bool = True
    winner: bool = False


class ComparisonReport(BaseModel):
    """Paired geodesic vs. fine-tune vs. naive recovery outcome."""

    plan_size: int
    geodesic_final_accuracy: float
    geodesic_mean_accuracy: float
    geodesic_work_epochs: float
    geodesic_steps: int
    beta_used: float
    finetune_final_accuracy: float
    finetune_mean_accuracy: float
    finetune_work_epochs: float
    finetune_work_to_match: Optional[float] = Field(
        default=None, description="Fine-tune epochs until within 2 points of the geodesic final accuracy"
    )
    naive_final_accuracy: float
    naive_mean_accuracy: float
    finetune_matched_epochs_per_step: Optional[int] = Field(
        default=None, description="Smallest scheduled epochs per step reaching the geodesic final accuracy"
    )
    finetune_matched_work: Optional[float] = Field(default=None, description="Total epochs of that schedule")


class RunManifest(BaseModel):
    """Everything needed to re-run a CLI command."""

    command: str
    argv: List[str]
    parameters: Dict[str, Any]
    seeds: Dict[str, int] = Field(default_factory=dict)
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    settings: Dict[str, Any] = Field(default_factory=dict)
    tool_version: str
    timestamp: datetime


def json_schemas() -> Dict[str, Dict[str, Any]]:
    """JSON schemas of every JSON output, keyed by file stem."""
    from .damage_plan import DamagePlan

    models = {
        "checkpoint_manifest": CheckpointManifest,
        "damage_plan": DamagePlan,
        "spectrum_summary": SpectrumSummary,
        "trace_metadata": TraceMetadata,
        "recovery_summary": RecoverySummary,
        "comparison_report": ComparisonReport,
        "run_manifest": RunManifest,
    }
    return {name: model.model_json_schema() for name, model in models.items()}
