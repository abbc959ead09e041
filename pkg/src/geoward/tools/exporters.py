"""
CSV and JSON writers for every tabular artifact.

All CSVs have exactly one header row; floats are written with ``repr`` so
values round-trip exactly and re-runs compare bit-for-bit.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from ..analysis.damage import SweepPoint
from ..analysis.metric import MetricTensor, Spectrum
from ..analysis.paths import PathTrace
from ..formats.damage_plan import DamagePlan
from ..formats.reports import TraceMetadata
from ..model.training import TrainingLog

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRAINING_LOG_HEADER = ["epoch", "loss", "accuracy"]
SPECTRUM_HEADER = ["index", "eigenvalue", "vulnerable"]
TRACE_HEADER = ["t", "loss", "accuracy", "speed", "acceleration", "work"]
PERTURBATION_HEADER = ["trial", "mode", "sigma", "norm", "functional_distance", "quadratic_form", "accuracy", "sign"]
SWEEP_HEADER = ["deleted", "fraction", "loss", "accuracy"]


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug(f"Wrote {path}")
    return path


def write_json(path: PathLike, model: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    return path


def write_training_log(path: PathLike, log: TrainingLog) -> Path:
    return write_rows(path, TRAINING_LOG_HEADER, ((r.epoch, r.loss, r.accuracy) for r in log.records))


def write_spectrum(path: PathLike, s: Spectrum) -> Path:
    return write_rows(
        path,
        SPECTRUM_HEADER,
        ((i, float(lam), bool(lam >= s.threshold)) for i, lam in enumerate(s.eigenvalues)),
    )


def write_metric_blob(path: PathLike, gt: MetricTensor) -> Path:
    """Row-major upper triangle (including the diagonal) as little-endian float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(gt.g.upper_triangle()).astype("<f8").tobytes())
    return path


def trace_metadata(
    trace: PathTrace, plan: Optional[DamagePlan] = None, seeds: Optional[Dict[str, int]] = None
) -> TraceMetadata:
    extra = {k: v for k, v in trace.metadata.items() if k != "batch_ids"}
    return TraceMetadata(
        kind=trace.kind,
        samples=len(trace),
        plan=plan.model_dump() if plan is not None else None,
        seeds=dict(seeds or {}),
        batch_ids=list(trace.metadata.get("batch_ids", [])),
        extra=extra,
    )


def write_trace(
    path: PathLike, trace: PathTrace, plan: Optional[DamagePlan] = None, seeds: Optional[Dict[str, int]] = None
) -> List[Path]:
    """Trace CSV plus a ``.json`` metadata sidecar next to it."""
    path = Path(path)
    rows = ((s.t, s.loss, s.accuracy, s.speed, s.acceleration, s.work) for s in trace.samples)
    csv_path = write_rows(path, TRACE_HEADER, rows)
    meta_path = write_json(path.with_suffix(".json"), trace_metadata(trace, plan, seeds))
    return [csv_path, meta_path]


def write_perturbation_report(path: PathLike, rows: Iterable[Sequence[Any]]) -> Path:
    return write_rows(path, PERTURBATION_HEADER, rows)


def write_sweep(path: PathLike, points: Sequence[SweepPoint]) -> Path:
    return write_rows(path, SWEEP_HEADER, ((p.deleted, p.fraction, p.loss, p.accuracy) for p in points))


def read_rows(path: PathLike) -> List[Dict[str, str]]:
    """Rows of a CSV written by this module, keyed by header."""
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
