"""
Damage paths gamma(t) in weight space and what the metric says about them:
path energy, break-down speed s(t) and break-down acceleration ds/dt.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np

from ..config import config
from ..core.exceptions import InvalidInputError, NumericalFailureError
from ..core.parallel import ordered_map
from ..formats.damage_plan import DamagePlan
from ..model.dataset import Dataset
from ..model.network import FlatWeights, NetworkSpec, WeightsLike, apply_mask, as_vector
from ..model.training import evaluate
from .metric import quadratic_form_matfree

logger = logging.getLogger(__name__)

PathKind = Literal["naive_linear", "stepwise_deletion", "geodesic", "fine_tune"]
SPEED_FLOOR = -1e-12


@dataclass(frozen=True)
class PathSample:
    t: float
    w: FlatWeights
    loss: float
    accuracy: float
    speed: float
    acceleration: float
    work: Optional[float] = None


@dataclass(frozen=True)
class PathTrace:
    """Ordered samples along a path; t runs from 0 to 1 strictly increasing."""

    samples: List[PathSample]
    kind: PathKind
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.samples:
            raise InvalidInputError("A path trace needs at least one sample")
        ts = [s.t for s in self.samples]
        if ts[0] != 0.0:
            raise InvalidInputError(f"Path trace must start at t=0, got {ts[0]}")
        if len(ts) > 1 and ts[-1] != 1.0:
            raise InvalidInputError(f"Path trace must end at t=1, got {ts[-1]}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("Path trace t values must be strictly increasing")
        low = min(s.speed for s in self.samples)
        if low < SPEED_FLOOR:
            raise NumericalFailureError(f"Negative break-down speed {low:.3e} in trace", {"kind": self.kind})

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ts(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([s.accuracy for s in self.samples])

    @property
    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.samples])

    @property
    def speeds(self) -> np.ndarray:
        return np.array([s.speed for s in self.samples])

    @property
    def accelerations(self) -> np.ndarray:
        return np.array([s.acceleration for s in self.samples])

    @property
    def points(self) -> List[FlatWeights]:
        return [s.w for s in self.samples]

    @property
    def final(self) -> PathSample:
        return self.samples[-1]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def peak_acceleration(self) -> float:
        return float(np.max(np.abs(self.accelerations)))


# ==================== PATH CONSTRUCTION ====================

def uniform_ts(count: int) -> np.ndarray:
    if count < 1:
        raise InvalidInputError(f"A path needs at least one point, got {count}")
    return np.linspace(0.0, 1.0, count) if count > 1 else np.zeros(1)


def naive_linear_path(w_t: FlatWeights, plan: DamagePlan, steps: int) -> List[FlatWeights]:
    """``steps`` points with damaged coordinates scaled by (1 - t); the endpoint is masked exactly."""
    if steps < 2:
        raise InvalidInputError(f"A linear path needs at least 2 points, got {steps}")
    plan.check_bounds(w_t.n)
    damaged = np.asarray(plan.indices, dtype=np.int64)
    path = []
    for t in uniform_ts(steps)[:-1]:
        values = np.array(w_t.values, copy=True)
        values[damaged] *= 1.0 - t
        path.append(w_t.with_values(values))
    path.append(apply_mask(w_t, plan))
    return path


def stepwise_deletion_path(w_t: FlatWeights, plan: DamagePlan) -> List[FlatWeights]:
    """Node-at-a-time staircase: w_t, then one more index group zeroed per point."""
    plan.check_bounds(w_t.n)
    values = np.array(w_t.values, copy=True)
    path = [w_t]
    for group in plan.node_groups():
        values[list(group)] = 0.0
        path.append(w_t.with_values(values))
    return path


def _check_path(spec: NetworkSpec, path: Sequence[WeightsLike], ts: Optional[Sequence[float]], minimum: int) -> tuple:
    if len(path) < minimum:
        raise InvalidInputError(f"Path needs at least {minimum} points, got {len(path)}")
    points = [np.asarray(as_vector(spec, p)) for p in path]
    if ts is None:
        times = uniform_ts(len(points))
    else:
        times = np.asarray(ts, dtype=np.float64)
        if times.shape != (len(points),):
            raise InvalidInputError(f"Got {times.shape[0]} t values for {len(points)} path points")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("Path t values must be strictly increasing")
    return points, times


def _segment_speeds(spec: NetworkSpec, batch: Dataset, points: List[np.ndarray], times: np.ndarray) -> List[float]:
    """Speed of each segment at its midpoint, with velocity (w_{k+1} - w_k) / dt."""
    speeds = []
    for k in range(len(points) - 1):
        dt = times[k + 1] - times[k]
        velocity = (points[k + 1] - points[k]) / dt
        midpoint = 0.5 * (points[k] + points[k + 1])
        speeds.append(quadratic_form_matfree(spec, midpoint, batch, velocity))
    return speeds


def path_energy(
    spec: NetworkSpec, batch: Dataset, path: Sequence[WeightsLike], ts: Optional[Sequence[float]] = None
) -> float:
    """Midpoint-rule integral of s(t) dt, with no square root.

    Each segment contributes s(midpoint, dw/dt) * dt, so energies of
    consecutive sub-paths add up.
    """
    points, times = _check_path(spec, path, ts, 2)
    speeds = _segment_speeds(spec, batch, points, times)
    return float(sum(s * dt for s, dt in zip(speeds, np.diff(times))))


def path_length(
    spec: NetworkSpec, batch: Dataset, path: Sequence[WeightsLike], ts: Optional[Sequence[float]] = None
) -> float:
    """Riemannian length: midpoint-rule integral of sqrt(s(t)) dt."""
    points, times = _check_path(spec, path, ts, 2)
    speeds = _segment_speeds(spec, batch, points, times)
    return float(sum(np.sqrt(max(s, 0.0)) * dt for s, dt in zip(speeds, np.diff(times))))


# ==================== SPEED / ACCELERATION ====================

def breakdown_speed(spec: NetworkSpec, batch: Dataset, w: WeightsLike, velocity: np.ndarray) -> float:
    """s = velocity^T g(w) velocity."""
    return quadratic_form_matfree(spec, w, batch, velocity)


def default_step(w: np.ndarray, velocity: np.ndarray) -> float:
    scale = float(np.linalg.norm(w))
    if scale == 0.0:
        scale = 1.0
    return 1e-4 * scale / max(float(np.linalg.norm(velocity)), 1e-12)


def breakdown_acceleration(
    spec: NetworkSpec,
    batch: Dataset,
    w: WeightsLike,
    velocity: np.ndarray,
    h: Optional[float] = None,
) -> float:
    """Central difference of s along the velocity: (s(w + h v) - s(w - h v)) / 2h."""
    values = as_vector(spec, w)
    velocity = as_vector(spec, velocity)
    if h is None:
        h = default_step(values, velocity)
    if not h > 0:
        raise InvalidInputError(f"Finite-difference step must be positive, got {h}")
    ahead = quadratic_form_matfree(spec, values + h * velocity, batch, velocity)
    behind = quadratic_form_matfree(spec, values - h * velocity, batch, velocity)
    rate = (ahead - behind) / (2.0 * h)
    if not np.isfinite(rate):
        raise NumericalFailureError("Non-finite break-down acceleration", {"h": h})
    return float(rate)


def sample_velocities(points: List[np.ndarray], times: np.ndarray) -> List[np.ndarray]:
    """Central differences inside the path, one-sided at the ends."""
    count = len(points)
    if count == 1:
        return [np.zeros_like(points[0])]
    velocities = []
    for k in range(count):
        lo, hi = max(k - 1, 0), min(k + 1, count - 1)
        velocities.append((points[hi] - points[lo]) / (times[hi] - times[lo]))
    return velocities


def trace_path(
    spec: NetworkSpec,
    batch: Dataset,
    eval_set: Dataset,
    path: Sequence[WeightsLike],
    kind: PathKind,
    ts: Optional[Sequence[float]] = None,
    work: Optional[Sequence[float]] = None,
    metadata: Optional[Dict[str, Any]] = None,
    threads: Optional[int] = None,
) -> PathTrace:
    """Loss, accuracy, speed and acceleration at every path point.

    Points are evaluated independently (in parallel); samples keep path order.
    """
    points, times = _check_path(spec, path, ts, 1)
    if work is not None and len(work) != len(points):
        raise InvalidInputError(f"Got {len(work)} work values for {len(points)} path points")
    velocities = sample_velocities(points, times)

    def measure(k: int) -> PathSample:
        loss, accuracy = evaluate(spec, points[k], eval_set)
        return PathSample(
            t=float(times[k]),
            w=FlatWeights(values=points[k], spec=spec),
            loss=loss,
            accuracy=accuracy,
            speed=breakdown_speed(spec, batch, points[k], velocities[k]),
            acceleration=breakdown_acceleration(spec, batch, points[k], velocities[k]),
            work=None if work is None else float(work[k]),
        )

    samples = ordered_map(measure, range(len(points)), threads if threads is not None else config.threads)
    meta = dict(metadata or {})
    meta.setdefault("batch_ids", [int(i) for i in batch.sorted_by_id().ids])
    logger.debug(f"Traced {kind} path with {len(samples)} samples")
    return PathTrace(samples=samples, kind=kind, metadata=meta)


def steepest_decline_window(trace: PathTrace, fraction: float = 0.25) -> tuple:
    """(t_start, t_end) of the window spanning ``fraction`` of the t range whose accuracy falls the most.

    Windows start at sample points and end at the last sample within reach;
    ties go to the earliest window.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"Window fraction must lie in (0, 1], got {fraction}")
    if len(trace) < 2:
        raise InvalidInputError("A decline window needs at least two samples")
    ts, accuracies = trace.ts, trace.accuracies
    width = fraction * (ts[-1] - ts[0])
    best, window = -np.inf, (float(ts[0]), float(ts[-1]))
    for i in range(len(ts) - 1):
        if ts[i] + width > ts[-1] + 1e-12:
            break
        j = int(np.searchsorted(ts, ts[i] + width + 1e-12, side="right")) - 1
        if j <= i:
            continue
        drop = accuracies[i] - accuracies[j]
        if drop > best:
            best, window = drop, (float(ts[i]), float(ts[j]))
    return window
