"""
Training: plain mini-batch SGD, evaluation, and the prune/fine-tune
recovery baseline.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import InvalidInputError, NumericalFailureError
from ..formats.damage_plan import DamagePlan
from .dataset import Dataset
from .network import (
    FlatWeights,
    ForwardCache,
    NetworkSpec,
    WeightsLike,
    as_vector,
    forward_cache,
    init_weights,
    parameter_gradient,
    softmax,
)

if TYPE_CHECKING:
    from ..analysis.paths import PathTrace

logger = logging.getLogger(__name__)

LossKind = Literal["cross_entropy", "mse"]


class TrainConfig(BaseModel):
    """SGD hyper-parameters. A learning rate of 0 is allowed and is a null update."""

    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=0.1, ge=0.0)
    seed: int = Field(default=0)
    loss: LossKind = Field(default="cross_entropy")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.records[-1] if self.records else None


def _check_dims(spec: NetworkSpec, d: Dataset) -> None:
    if d.input_dim != spec.input_dim:
        raise InvalidInputError(
            f"Dataset '{d.name}' has {d.input_dim} features, network expects {spec.input_dim}"
        )
    if d.num_classes > spec.output_dim:
        raise InvalidInputError(
            f"Dataset '{d.name}' has labels up to {d.num_classes - 1}, network has {spec.output_dim} outputs"
        )


def _one_hot(labels: np.ndarray, m: int) -> np.ndarray:
    target = np.zeros((labels.shape[0], m))
    target[np.arange(labels.shape[0]), labels] = 1.0
    return target


def loss_value(spec: NetworkSpec, cache: ForwardCache, labels: np.ndarray, loss: LossKind) -> float:
    """Mean loss over the batch."""
    if loss == "cross_entropy":
        p = softmax(cache.logits)
        picked = p[np.arange(labels.shape[0]), labels]
        return float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    target = _one_hot(labels, spec.output_dim)
    return float(np.mean(np.sum((cache.outputs - target) ** 2, axis=1)))


def loss_logit_gradient(spec: NetworkSpec, cache: ForwardCache, labels: np.ndarray, loss: LossKind) -> np.ndarray:
    """d(mean loss)/d(logits), shape (batch, m)."""
    batch = labels.shape[0]
    target = _one_hot(labels, spec.output_dim)
    if loss == "cross_entropy":
        return (softmax(cache.logits) - target) / batch
    d_out = 2.0 * (cache.outputs - target) / batch
    if spec.output_mode == "softmax":
        p = cache.outputs
        return p * (d_out - np.sum(p * d_out, axis=1, keepdims=True))
    return d_out


def evaluate(spec: NetworkSpec, w: WeightsLike, d: Dataset, loss: LossKind = "cross_entropy") -> Tuple[float, float]:
    """(mean loss, accuracy); argmax ties go to the lowest class index."""
    _check_dims(spec, d)
    cache = forward_cache(spec, w, d.inputs)
    predictions = np.argmax(cache.outputs, axis=1)
    correct = int(np.count_nonzero(predictions == d.labels))
    return loss_value(spec, cache, d.labels, loss), correct / len(d)


def train(
    spec: NetworkSpec,
    d: Dataset,
    cfg: TrainConfig,
    init: Optional[WeightsLike] = None,
    frozen: Optional[np.ndarray] = None,
) -> Tuple[FlatWeights, TrainingLog]:
    """Mini-batch SGD without momentum.

    ``frozen`` is a boolean mask of coordinates whose gradient is forced to 0
    (they keep their initial value).
    """
    _check_dims(spec, d)
    values = np.array(as_vector(spec, init) if init is not None else init_weights(spec, cfg.seed).values, copy=True)
    rng = np.random.default_rng([cfg.seed, 1])
    log = TrainingLog()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(d))
        for start in range(0, len(d), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            x, labels = d.inputs[rows], d.labels[rows]
            try:
                cache = forward_cache(spec, values, x)
            except NumericalFailureError as e:
                raise NumericalFailureError(f"Training diverged in epoch {epoch}", {**e.details, "epoch": epoch})
            d_logits = loss_logit_gradient(spec, cache, labels, cfg.loss)
            grad = parameter_gradient(spec, values, x, d_logits, cache=cache)
            if frozen is not None:
                grad[frozen] = 0.0
            values -= cfg.learning_rate * grad
            if not np.all(np.isfinite(values)):
                raise NumericalFailureError(f"Training diverged in epoch {epoch}", {"epoch": epoch})

        try:
            loss, accuracy = evaluate(spec, values, d, cfg.loss)
        except NumericalFailureError:
            raise NumericalFailureError(f"Training diverged in epoch {epoch}", {"epoch": epoch})
        if not np.isfinite(loss):
            raise NumericalFailureError(f"Training loss is non-finite in epoch {epoch}", {"epoch": epoch})
        log.records.append(EpochRecord(epoch=epoch, loss=loss, accuracy=accuracy))
        logger.debug(f"Epoch {epoch}/{cfg.epochs}: loss={loss:.4f} accuracy={accuracy:.4f}")

    if log.final:
        logger.info(f"Trained {spec.arch()} for {cfg.epochs} epochs: accuracy {log.final.accuracy:.4f}")
    return FlatWeights(values=values, spec=spec), log


def fine_tune_recovery(
    spec: NetworkSpec,
    w_t: FlatWeights,
    plan: DamagePlan,
    node_order: Sequence[Sequence[int]],
    epochs_per_step: int,
    cfg: TrainConfig,
    train_set: Dataset,
    eval_set: Optional[Dataset] = None,
    metric_batch: Optional[Dataset] = None,
) -> "PathTrace":
    """Iterative prune/retrain baseline.

    Deletes one index group at a time, then retrains only the undamaged
    coordinates for ``epochs_per_step`` epochs. Damaged coordinates stay
    exactly 0. Each sample's ``work`` is the cumulative update epochs.
    """
    from ..analysis.paths import trace_path

    if epochs_per_step < 0:
        raise InvalidInputError(f"epochs_per_step must be >= 0, got {epochs_per_step}")
    covered = sorted({int(i) for group in node_order for i in group})
    if tuple(covered) != plan.indices:
        raise InvalidInputError("node_order must partition the damage plan's indices")
    plan.check_bounds(spec.n_params)

    values = np.array(w_t.values, copy=True)
    mask = np.zeros(spec.n_params, dtype=bool)
    path = [values.copy()]
    work = [0.0]
    for step, group in enumerate(node_order, start=1):
        mask[list(group)] = True
        values[mask] = 0.0
        if epochs_per_step > 0:
            step_cfg = cfg.model_copy(update={"epochs": epochs_per_step, "seed": cfg.seed + step})
            trained, _ = train(spec, train_set, step_cfg, init=values, frozen=mask)
            values = np.array(trained.values, copy=True)
        path.append(values.copy())
        work.append(work[-1] + epochs_per_step)
        logger.debug(f"Fine-tune step {step}/{len(node_order)} done")

    batch = metric_batch if metric_batch is not None else train_set
    return trace_path(
        spec, batch, eval_set if eval_set is not None else train_set, path, kind="fine_tune", work=work
    )
