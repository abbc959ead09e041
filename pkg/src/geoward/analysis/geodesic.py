"""
Geodesic recovery.

From a trained point w_t, repeatedly take the step theta that minimises
theta^T g theta - beta theta^T v_w under theta^T theta <= cap, where v_w points
straight at the damage hyperplane. The metric is re-evaluated at every step on
a round-robin batch, so the path bends around vulnerable directions while the
undamaged weights compensate.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import config
from ..core.exceptions import (
    DegenerateInputError,
    InvalidInputError,
    NonConvergenceError,
    NumericalFailureError,
)
from ..core.parallel import ordered_map
from ..formats.damage_plan import DamagePlan
from ..formats.reports import ComparisonReport, RecoverySummary
from ..model.dataset import Dataset
from ..model.network import FlatWeights, NetworkSpec, WeightsLike, apply_mask, as_vector
from ..model.training import TrainConfig, fine_tune_recovery
from .metric import MetricFactor, metric_factor
from .paths import PathTrace, naive_linear_path, path_energy, path_length, trace_path, uniform_ts

logger = logging.getLogger(__name__)

DEFAULT_BETA_MULTIPLIERS = (0.1, 1.0, 10.0)
KKT_TOL = 1e-8
MAX_DOUBLINGS = 2000
MAX_BISECTIONS = 4000
MATCH_WINDOW = 0.02
FINETUNE_SCHEDULE = (0, 1, 2, 4, 8)


class RecoveryConfig(BaseModel):
    """Geodesic recovery settings.

    With neither ``beta`` nor ``beta_sweep`` set, the default sweep
    {0.1, 1, 10} * 2 sqrt(cap) lambda_1 is run and the lowest-energy path wins.
    """

    model_config = ConfigDict(frozen=True)

    beta: Optional[float] = Field(default=None, gt=0.0, description="Fixed trade-off weight")
    beta_sweep: Optional[Tuple[float, ...]] = Field(default=None, description="Absolute beta values to sweep")
    step_norm_sq_cap: float = Field(default=0.01, gt=0.0, description="Bound on theta^T theta per step")
    hyperplane_tol: float = Field(default=1e-6, gt=0.0, description="Converged once max |w_i| over damaged i is below this")
    max_steps: int = Field(default=2000, ge=1)
    metric_batch: Optional[int] = Field(default=None, ge=1, description="Examples per metric evaluation")
    min_alignment: float = Field(
        default=0.75, ge=0.0, le=1.0, description="Required progress theta.v_w as a fraction of sqrt(cap)"
    )
    max_escalations: int = Field(default=60, ge=0, description="beta doublings per step before pure descent")
    solver: Literal["auto", "dense", "lowrank"] = Field(default="auto")
    parametrization: Literal["progress", "step"] = Field(
        default="progress",
        description="t along the trace: share of the damaged norm removed, or step index",
    )
    trace_samples: Optional[int] = Field(
        default=None, ge=2, description="Trace at most this many points, evenly spaced in t"
    )

    @model_validator(mode="after")
    def _check_sweep(self) -> "RecoveryConfig":
        if self.beta_sweep is not None:
            if not self.beta_sweep:
                raise ValueError("beta_sweep must not be empty")
            if any(b <= 0 for b in self.beta_sweep):
                raise ValueError("beta_sweep values must be positive")
        return self

    @property
    def batch_size(self) -> int:
        return self.metric_batch if self.metric_batch is not None else config.metric_batch


@dataclass
class RecoveryResult:
    trace: PathTrace
    total_energy: float
    steps_used: int
    beta_used: float
    converged: bool = True
    escalations: int = 0
    work_epochs: float = 0.0
    total_length: float = 0.0
    branches: List[RecoverySummary] = field(default_factory=list)

    def summary(self, winner: bool = False) -> RecoverySummary:
        return RecoverySummary(
            beta=self.beta_used,
            steps=self.steps_used,
            total_energy=self.total_energy,
            path_length=self.total_length,
            final_accuracy=self.trace.final.accuracy,
            mean_accuracy=self.trace.mean_accuracy,
            work_epochs=self.work_epochs,
            converged=self.converged,
            winner=winner,
        )


@dataclass(frozen=True)
class QPSolution:
    theta: np.ndarray
    mu: float
    constrained: bool
    kkt_residual: float


# ==================== HYPERPLANE ====================

def damaged_distance(w: np.ndarray, plan: DamagePlan) -> float:
    """max |w_i| over damaged i (0 for an empty plan)."""
    if plan.is_empty:
        return 0.0
    return float(np.max(np.abs(w[list(plan.indices)])))


def hyperplane_direction(w: WeightsLike, plan: DamagePlan, tol: float = 0.0) -> np.ndarray:
    """Unit vector with components -w_i on damaged coordinates, 0 elsewhere."""
    values = w.values if isinstance(w, FlatWeights) else np.asarray(w, dtype=np.float64)
    plan.check_bounds(values.shape[0])
    if damaged_distance(values, plan) <= tol:
        raise DegenerateInputError("Weights already lie on the damage hyperplane", {"tol": tol})
    direction = np.zeros_like(values)
    damaged = list(plan.indices)
    direction[damaged] = -values[damaged]
    return direction / np.linalg.norm(direction)


# ==================== QP ====================

def solve_step_qp(factor: MetricFactor, v_w: np.ndarray, beta: float, cap: float) -> QPSolution:
    """min theta^T g theta - beta theta^T v_w  s.t. theta^T theta <= cap.

    Stationarity gives (g + mu I) theta = (beta/2) v_w with mu >= 0; mu is 0
    when the unconstrained minimiser is feasible, otherwise found by bisection
    on the strictly decreasing |theta(mu)|.
    """
    if not beta > 0:
        raise InvalidInputError(f"beta must be positive, got {beta}")
    if not cap > 0:
        raise InvalidInputError(f"Step cap must be positive, got {cap}")
    rhs = 0.5 * beta * np.asarray(v_w, dtype=np.float64)
    coeffs = factor.basis.T @ rhs
    rhs_norm = float(np.linalg.norm(rhs))
    perp = rhs - factor.basis @ coeffs if factor.has_complement else np.zeros_like(rhs)
    perp_norm = float(np.linalg.norm(perp))
    if perp_norm <= 1e-12 * rhs_norm:
        perp, perp_norm = np.zeros_like(rhs), 0.0
    eigenvalues = factor.eigenvalues
    radius = np.sqrt(cap)

    def theta_norm(mu: float) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = np.where(coeffs != 0.0, coeffs / (eigenvalues + mu), 0.0)
            tail = perp_norm / mu if perp_norm else 0.0
        return float(np.sqrt(np.sum(scaled * scaled) + tail * tail))

    def theta_at(mu: float) -> np.ndarray:
        theta = factor.basis @ (coeffs / (eigenvalues + mu))
        if perp_norm:
            theta = theta + perp / mu
        return theta

    null = (eigenvalues <= 0.0) & (np.abs(coeffs) > 1e-12 * rhs_norm)
    unconstrained_ok = not perp_norm and not np.any(null)
    if unconstrained_ok:
        safe = np.where(eigenvalues > 0.0, eigenvalues, np.inf)
        theta = factor.basis @ (coeffs / safe)
        if float(np.linalg.norm(theta)) <= radius:
            return _checked(factor, theta, 0.0, rhs, beta, cap, constrained=False)

    lo = 0.0
    hi = factor.lambda_1 if factor.lambda_1 > 0 else 1.0
    for _ in range(MAX_DOUBLINGS):
        norm = theta_norm(hi)
        if not np.isfinite(norm):
            raise NumericalFailureError("Non-finite step norm while bracketing mu", {"mu_hi": hi})
        if norm < radius:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalFailureError("Could not bracket the step multiplier", {"mu_lo": lo, "mu_hi": hi})

    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if theta_norm(mid) > radius:
            lo = mid
        else:
            hi = mid
    theta = theta_at(hi)
    if not np.all(np.isfinite(theta)):
        raise NumericalFailureError("Non-finite step after bisection", {"mu_lo": lo, "mu_hi": hi})
    # Feasible side of the bracket; rescale away the last ulp of overshoot.
    norm = float(np.linalg.norm(theta))
    if norm > radius:
        theta = theta * (radius / norm)
    return _checked(factor, theta, hi, rhs, beta, cap, constrained=True)


def _checked(
    factor: MetricFactor, theta: np.ndarray, mu: float, rhs: np.ndarray, beta: float, cap: float, constrained: bool
) -> QPSolution:
    """Verify stationarity, feasibility and complementary slackness."""
    residual = float(np.linalg.norm(factor.matvec(theta) + mu * theta - rhs))
    scale = 0.5 * beta
    norm_sq = float(theta @ theta)
    slack = mu * abs(norm_sq - cap) if constrained else 0.0
    report = {"residual": residual, "mu": mu, "norm_sq": norm_sq, "cap": cap}
    if residual > KKT_TOL * scale:
        raise NumericalFailureError("Step QP stationarity residual too large", report)
    if norm_sq > cap * (1.0 + 1e-12) + 1e-12:
        raise NumericalFailureError("Step QP violates the norm cap", report)
    if slack > KKT_TOL * max(1.0, mu * cap):
        raise NumericalFailureError("Step QP complementary slackness violated", report)
    return QPSolution(theta=theta, mu=mu, constrained=constrained, kkt_residual=residual)


def qp_step(
    spec: NetworkSpec,
    w: WeightsLike,
    batch: Dataset,
    v_w: np.ndarray,
    cfg: RecoveryConfig,
    beta: Optional[float] = None,
    cap: Optional[float] = None,
) -> np.ndarray:
    """One recovery step theta at w, with the metric of ``batch``."""
    beta = beta if beta is not None else cfg.beta
    if beta is None:
        raise InvalidInputError("qp_step needs a beta (set RecoveryConfig.beta or pass beta=)")
    factor = metric_factor(spec, w, batch, mode=cfg.solver)
    return solve_step_qp(factor, v_w, beta, cap if cap is not None else cfg.step_norm_sq_cap).theta


# ==================== RECOVERY LOOP ====================

def round_robin_batch(d: Dataset, step: int, size: int) -> Dataset:
    """The step-th consecutive window of ``size`` examples, in id order, wrapping around."""
    ordered = d.sorted_by_id()
    size = min(size, len(ordered))
    positions = (step * size + np.arange(size)) % len(ordered)
    return ordered.take(positions, name=f"{d.name}[metric batch {step}]")


def default_betas(spec: NetworkSpec, w_t: WeightsLike, dataset: Dataset, cfg: RecoveryConfig) -> Tuple[float, ...]:
    """Sweep scaled to the metric: multipliers * 2 sqrt(cap) lambda_1 at w_t."""
    lambda_1 = metric_factor(spec, w_t, round_robin_batch(dataset, 0, cfg.batch_size), mode=cfg.solver).lambda_1
    scale = 2.0 * np.sqrt(cfg.step_norm_sq_cap) * (lambda_1 if lambda_1 > 0 else 1.0)
    return tuple(float(m * scale) for m in DEFAULT_BETA_MULTIPLIERS)


def _recovery_step(
    spec: NetworkSpec, values: np.ndarray, plan: DamagePlan, batch: Dataset, beta: float, cfg: RecoveryConfig
) -> Tuple[np.ndarray, int]:
    """Accepted step from ``values``: beta is doubled until the step moves toward the hyperplane."""
    damaged = list(plan.indices)
    distance = damaged_distance(values, plan)
    v_w = hyperplane_direction(values, plan)
    cap = min(cfg.step_norm_sq_cap, float(np.sum(values[damaged] ** 2)))
    radius = np.sqrt(cap)
    factor = metric_factor(spec, values, batch, mode=cfg.solver)

    step_beta = beta
    for escalation in range(cfg.max_escalations + 1):
        theta = solve_step_qp(factor, v_w, step_beta, cap).theta
        moved = values + theta
        progress = float(theta @ v_w)
        if damaged_distance(moved, plan) <= distance and progress >= cfg.min_alignment * radius:
            return moved, escalation
        step_beta *= 2.0
    logger.debug(f"beta escalation exhausted at beta={step_beta:.3e}; taking a pure descent step")
    return values + radius * v_w, cfg.max_escalations + 1


def path_ts(path: Sequence[np.ndarray], plan: DamagePlan, parametrization: str = "progress") -> np.ndarray:
    """t for every recovery point.

    ``progress`` puts t_k at the share of the starting damaged norm removed by
    point k (rescaled to end at 1), the same axis a naive linear path uses.
    It falls back to the step index when the damaged norm does not shrink
    strictly, which the alignment requirement rules out for min_alignment > 0.
    """
    if parametrization == "progress" and len(path) > 1 and not plan.is_empty:
        damaged = list(plan.indices)
        norms = np.array([float(np.linalg.norm(p[damaged])) for p in path])
        span = norms[0] - norms[-1]
        if span > 0:
            ts = (norms[0] - norms) / span
            if np.all(np.diff(ts) > 0):
                return ts
        logger.debug("Damaged norm not strictly decreasing; tracing against the step index")
    return uniform_ts(len(path))


def trace_indices(ts: np.ndarray, count: Optional[int]) -> np.ndarray:
    """Indices of the first points reaching ``count`` evenly spaced t levels; both ends always kept."""
    if count is None or len(ts) <= count:
        return np.arange(len(ts))
    picks = np.searchsorted(ts, np.linspace(0.0, 1.0, count), side="left")
    return np.unique(np.clip(picks, 0, len(ts) - 1))


def _recover_single(
    spec: NetworkSpec,
    w_t: FlatWeights,
    plan: DamagePlan,
    dataset: Dataset,
    cfg: RecoveryConfig,
    beta: float,
    eval_set: Dataset,
    threads: Optional[int],
) -> RecoveryResult:
    batch_size = min(cfg.batch_size, len(dataset))
    trace_batch = round_robin_batch(dataset, 0, batch_size)
    values = np.array(w_t.values, copy=True)
    path = [values.copy()]
    schedule: List[List[int]] = []
    escalations = 0
    converged = damaged_distance(values, plan) <= cfg.hyperplane_tol

    while not converged and len(path) - 1 < cfg.max_steps:
        step = len(path) - 1
        batch = round_robin_batch(dataset, step, batch_size)
        schedule.append([int(i) for i in batch.ids])
        values, used = _recovery_step(spec, values, plan, batch, beta, cfg)
        escalations += used
        converged = damaged_distance(values, plan) <= cfg.hyperplane_tol
        path.append(values.copy())
        if step % 50 == 0:
            logger.debug(f"beta={beta:.3e} step {step + 1}: distance {damaged_distance(values, plan):.3e}")

    if converged and not plan.is_empty:
        snapped = np.array(path[-1], copy=True)
        snapped[list(plan.indices)] = 0.0
        if len(path) == 1 and not np.array_equal(snapped, path[0]):
            path.append(snapped)
        else:
            path[-1] = snapped

    steps = len(path) - 1
    work = [k * batch_size / len(dataset) for k in range(len(path))]
    ts = path_ts(path, plan, cfg.parametrization)
    kept = trace_indices(ts, cfg.trace_samples)
    trace = trace_path(
        spec,
        trace_batch,
        eval_set,
        [path[k] for k in kept],
        kind="geodesic",
        ts=ts[kept],
        work=[work[k] for k in kept],
        metadata={
            "beta": beta,
            "batch_schedule": schedule,
            "escalations": escalations,
            "path_points": len(path),
            "parametrization": cfg.parametrization,
        },
        threads=threads,
    )
    energy = path_energy(spec, trace_batch, path, ts) if len(path) > 1 else 0.0
    length = path_length(spec, trace_batch, path, ts) if len(path) > 1 else 0.0
    result = RecoveryResult(
        trace=trace,
        total_energy=energy,
        steps_used=steps,
        beta_used=beta,
        converged=converged,
        escalations=escalations,
        work_epochs=work[-1],
        total_length=length,
    )
    if converged:
        logger.info(f"Geodesic recovery with beta={beta:.3e} reached the hyperplane in {steps} steps")
    return result


def recover(
    spec: NetworkSpec,
    w_t: FlatWeights,
    plan: DamagePlan,
    dataset: Dataset,
    cfg: RecoveryConfig,
    eval_set: Optional[Dataset] = None,
    threads: Optional[int] = None,
) -> RecoveryResult:
    """Walk from w_t to the damage hyperplane of ``plan``.

    With several betas, branches run in parallel and the winner is the branch
    of minimum path energy among those that reached the hyperplane; branches
    that did not are only candidates for the partial result. All branches are
    listed in ``branches``. Raises NonConvergenceError (carrying the partial
    result) when no branch reaches the hyperplane within ``max_steps``.
    """
    plan.check_bounds(spec.n_params)
    eval_set = eval_set if eval_set is not None else dataset
    if plan.is_empty:
        betas: Sequence[float] = (cfg.beta if cfg.beta is not None else 1.0,)
    elif cfg.beta is not None:
        betas = (cfg.beta,)
    elif cfg.beta_sweep is not None:
        betas = cfg.beta_sweep
    else:
        betas = default_betas(spec, w_t, dataset, cfg)
    logger.info(f"Recovering {len(plan)} damaged coordinates with beta in {[f'{b:.3e}' for b in betas]}")

    inner_threads = 1 if len(betas) > 1 else threads
    results = ordered_map(
        lambda beta: _recover_single(spec, w_t, plan, dataset, cfg, beta, eval_set, inner_threads),
        betas,
        threads,
    )
    done = [r for r in results if r.converged]
    pool = done if done else results
    best = min(pool, key=lambda r: r.total_energy)
    best.branches = [r.summary(winner=r is best) for r in results]

    if not done:
        distance = damaged_distance(best.trace.final.w.values, plan)
        raise NonConvergenceError(
            f"Recovery did not reach the hyperplane within {cfg.max_steps} steps",
            partial=best,
            details={"distance": distance, "tol": cfg.hyperplane_tol},
        )
    energies = [r.total_energy for r in done]
    if not all(np.isfinite(e) for e in energies) or any(best.total_energy > e for e in energies):
        raise NumericalFailureError(
            "Converged branch energies are not finite or the winner is not the minimum",
            {"energies": energies, "winner": best.total_energy},
        )
    return best


def reconfigure(
    spec: NetworkSpec,
    w_current: FlatWeights,
    old_plan: DamagePlan,
    new_plan: DamagePlan,
    dataset: Dataset,
    cfg: RecoveryConfig,
    eval_set: Optional[Dataset] = None,
    threads: Optional[int] = None,
) -> RecoveryResult:
    """Move between damage configurations.

    Coordinates damaged only in ``new_plan`` are driven to 0 by recovery;
    coordinates freed from ``old_plan`` start at 0 and are left free to
    compensate like any other undamaged weight.
    """
    old_plan.check_bounds(spec.n_params)
    new_plan.check_bounds(spec.n_params)
    values = as_vector(spec, w_current)
    distance = damaged_distance(values, old_plan)
    if distance > cfg.hyperplane_tol:
        raise InvalidInputError(
            "Current weights are not on the old plan's hyperplane",
            {"distance": distance, "tol": cfg.hyperplane_tol},
        )
    start = apply_mask(w_current, old_plan)
    freed = sorted(set(old_plan.indices) - set(new_plan.indices))
    added = sorted(set(new_plan.indices) - set(old_plan.indices))
    logger.info(f"Reconfiguring: {len(added)} coordinates to delete, {len(freed)} restored")
    return recover(spec, start, new_plan, dataset, cfg, eval_set=eval_set, threads=threads)


# ==================== COMPARISON ====================

def work_to_match(trace: PathTrace, target_accuracy: float, window: float = MATCH_WINDOW) -> Optional[float]:
    """Cumulative work after which accuracy stays within ``window`` of the target to the end."""
    accuracies = trace.accuracies
    if accuracies[-1] < target_accuracy - window:
        return None
    k = len(accuracies) - 1
    while k > 0 and accuracies[k - 1] >= target_accuracy - window:
        k -= 1
    work = trace.samples[k].work
    return float(work) if work is not None else None


def matched_finetune(
    spec: NetworkSpec,
    w_t: FlatWeights,
    plan: DamagePlan,
    dataset: Dataset,
    ft_cfg: TrainConfig,
    target_accuracy: float,
    eval_set: Dataset,
    metric_batch: Dataset,
    schedule: Sequence[int] = FINETUNE_SCHEDULE,
    window: float = MATCH_WINDOW,
) -> Optional[Tuple[int, float, PathTrace]]:
    """Cheapest fine-tune schedule ending within ``window`` of ``target_accuracy``.

    Returns (epochs_per_step, total work, trace), or None when no schedule matches.
    """
    for epochs in sorted(schedule):
        trace = fine_tune_recovery(
            spec, w_t, plan, plan.node_groups(), epochs, ft_cfg, dataset,
            eval_set=eval_set, metric_batch=metric_batch,
        )
        if trace.final.accuracy >= target_accuracy - window:
            logger.debug(f"Fine-tune matches at {epochs} epochs per step")
            return epochs, float(trace.final.work or 0.0), trace
    return None


@dataclass
class Comparison:
    report: ComparisonReport
    geodesic: RecoveryResult
    fine_tune: PathTrace
    naive: PathTrace


def compare_recovery(
    spec: NetworkSpec,
    w_t: FlatWeights,
    plan: DamagePlan,
    dataset: Dataset,
    cfg: RecoveryConfig,
    ft_cfg: TrainConfig,
    epochs_per_step: int = 1,
    eval_set: Optional[Dataset] = None,
    naive_steps: int = 21,
    threads: Optional[int] = None,
    match_schedule: bool = True,
) -> Comparison:
    """Geodesic recovery, prune/fine-tune and the naive path on the same plan.

    Work is counted in gradient-equivalent epochs: a geodesic step with a
    metric batch of B examples costs B / |dataset|. With ``match_schedule``
    the fine-tune schedule is also searched for the cheapest epochs per step
    that reach the geodesic's final accuracy.
    """
    if plan.is_empty:
        raise InvalidInputError("Comparison needs a non-empty damage plan")
    eval_set = eval_set if eval_set is not None else dataset
    geodesic = recover(spec, w_t, plan, dataset, cfg, eval_set=eval_set, threads=threads)
    trace_batch = round_robin_batch(dataset, 0, cfg.batch_size)
    fine_tune = fine_tune_recovery(
        spec, w_t, plan, plan.node_groups(), epochs_per_step, ft_cfg, dataset,
        eval_set=eval_set, metric_batch=trace_batch,
    )
    naive = trace_path(
        spec, trace_batch, eval_set, naive_linear_path(w_t, plan, naive_steps), kind="naive_linear", threads=threads
    )
    matched = (
        matched_finetune(spec, w_t, plan, dataset, ft_cfg, geodesic.trace.final.accuracy, eval_set, trace_batch)
        if match_schedule
        else None
    )
    report = ComparisonReport(
        plan_size=len(plan),
        geodesic_final_accuracy=geodesic.trace.final.accuracy,
        geodesic_mean_accuracy=geodesic.trace.mean_accuracy,
        geodesic_work_epochs=geodesic.work_epochs,
        geodesic_steps=geodesic.steps_used,
        beta_used=geodesic.beta_used,
        finetune_final_accuracy=fine_tune.final.accuracy,
        finetune_mean_accuracy=fine_tune.mean_accuracy,
        finetune_work_epochs=float(fine_tune.final.work or 0.0),
        finetune_work_to_match=work_to_match(fine_tune, geodesic.trace.final.accuracy),
        naive_final_accuracy=naive.final.accuracy,
        naive_mean_accuracy=naive.mean_accuracy,
        finetune_matched_epochs_per_step=matched[0] if matched else None,
        finetune_matched_work=matched[1] if matched else None,
    )
    logger.info(
        f"Geodesic {report.geodesic_final_accuracy:.3f} in {report.geodesic_work_epochs:.2f} epochs; "
        f"fine-tune {report.finetune_final_accuracy:.3f} in {report.finetune_work_epochs:.2f}; "
        f"naive {report.naive_final_accuracy:.3f}"
    )
    return Comparison(report=report, geodesic=geodesic, fine_tune=fine_tune, naive=naive)
