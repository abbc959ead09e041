"""
Damage constructors: node deletion plans, random unit-ball perturbations and
adversarial perturbations along the vulnerable eigendirections of g.
"""

import logging
import re
from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import DegenerateInputError, InvalidInputError
from ..formats.damage_plan import DamagePlan
from ..model.dataset import Dataset
from ..model.network import FlatWeights, NetworkSpec, apply_mask, forward_batch
from ..model.training import evaluate
from .metric import MetricFactor, Spectrum

logger = logging.getLogger(__name__)

PerturbationKind = Literal["random_ball", "adversarial", "custom"]


@dataclass(frozen=True)
class Perturbation:
    """A weight displacement du with |du|_2 == norm."""

    du: np.ndarray
    norm: float
    kind: PerturbationKind

    def __post_init__(self):
        du = np.array(self.du, dtype=np.float64, copy=True)
        du.setflags(write=False)
        object.__setattr__(self, "du", du)

    @classmethod
    def custom(cls, du: np.ndarray) -> "Perturbation":
        du = np.asarray(du, dtype=np.float64)
        return cls(du=du, norm=float(np.linalg.norm(du)), kind="custom")

    def scaled(self, factor: float) -> "Perturbation":
        return Perturbation(du=self.du * factor, norm=self.norm * abs(factor), kind=self.kind)


# ==================== PLANS ====================

def _ranges(nodes: Sequence[int]) -> str:
    parts = []
    nodes = sorted(nodes)
    start = prev = None
    for node in nodes:
        if start is None:
            start = prev = node
        elif node == prev + 1:
            prev = node
        else:
            parts.append(f"{start}" if start == prev else f"{start}-{prev}")
            start = prev = node
    if start is not None:
        parts.append(f"{start}" if start == prev else f"{start}-{prev}")
    return ",".join(parts)


def node_groups(spec: NetworkSpec, layer: int, node: int) -> Tuple[int, ...]:
    """Incoming weights, bias and outgoing weights of one hidden unit."""
    layout = spec.layout
    sizes = spec.layer_sizes
    incoming = [layout.weight_index(layer - 1, node, col) for col in range(sizes[layer - 1])]
    bias = [layout.bias_index(layer - 1, node)]
    outgoing = [layout.weight_index(layer, row, node) for row in range(sizes[layer + 1])]
    return tuple(sorted(incoming + bias + outgoing))


def node_deletion_plan(spec: NetworkSpec, layer: int, nodes: Iterable[int]) -> DamagePlan:
    """Plan zeroing every parameter attached to the given hidden units.

    ``layer`` indexes ``spec.layer_sizes``; only hidden layers (1..L-2) hold
    deletable units.
    """
    if not 0 < layer < len(spec.layer_sizes) - 1:
        raise InvalidInputError(
            f"Layer {layer} is not a hidden layer of {spec.arch()}; input/output units are data, not parameters"
        )
    nodes = list(dict.fromkeys(int(node) for node in nodes))
    size = spec.layer_sizes[layer]
    bad = [node for node in nodes if not 0 <= node < size]
    if bad:
        raise InvalidInputError(f"Nodes {bad} out of range for hidden layer {layer} of size {size}")
    groups = tuple(node_groups(spec, layer, node) for node in nodes)
    indices = {i for group in groups for i in group}
    return DamagePlan.from_indices(indices, description=f"layer{layer} nodes {_ranges(nodes)}", groups=groups)


def union_plans(*plans: DamagePlan) -> DamagePlan:
    indices = {i for plan in plans for i in plan.indices}
    groups = tuple(g for plan in plans for g in plan.node_groups())
    description = " + ".join(p.description for p in plans if p.description)
    return DamagePlan.from_indices(indices, description=description, groups=groups)


_SHORTHAND = re.compile(r"^\s*(\d+)\s*:\s*([\d,\-\s]+)$")


def _parse_nodes(text: str) -> List[int]:
    nodes: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            if hi < lo:
                raise InvalidInputError(f"Empty node range '{part}'")
            nodes.extend(range(lo, hi + 1))
        else:
            nodes.append(int(part))
    return nodes


def plan_from_shorthand(spec: NetworkSpec, text: str) -> DamagePlan:
    """Expand ``"layer:nodes"`` shorthand, e.g. ``"1:0-7"`` or ``"1:0-3,9;2:0-1"``."""
    plans = []
    for clause in text.split(";"):
        if not clause.strip():
            continue
        match = _SHORTHAND.match(clause)
        if not match:
            raise InvalidInputError(f"Plan shorthand must look like 'layer:0-7,9', got '{clause}'")
        try:
            nodes = _parse_nodes(match.group(2))
        except ValueError:
            raise InvalidInputError(f"Bad node list in '{clause}'")
        plans.append(node_deletion_plan(spec, int(match.group(1)), nodes))
    if not plans:
        return DamagePlan(description="empty")
    return plans[0] if len(plans) == 1 else union_plans(*plans)


# ==================== PERTURBATIONS ====================

def random_ball_perturbation(n: int, sigma: float, seed: int) -> Perturbation:
    """Uniform direction on the sphere of radius sigma (Gaussian draw, rescaled)."""
    if n < 1:
        raise InvalidInputError(f"Dimension must be >= 1, got {n}")
    if sigma < 0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    return Perturbation(du=sigma * direction, norm=float(sigma), kind="random_ball")


def _top_mix(eigenvalues: np.ndarray, vectors: np.ndarray, sigma: float, top_k: int) -> Perturbation:
    if top_k < 1:
        raise InvalidInputError(f"top_k must be >= 1, got {top_k}")
    if sigma < 0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    if not np.any(eigenvalues > 0):
        raise DegenerateInputError("Spectrum is identically zero; no vulnerable direction exists")
    top_k = min(top_k, eigenvalues.shape[0])
    weights = np.sqrt(np.clip(eigenvalues[:top_k], 0.0, None))
    mix = vectors[:, :top_k] @ weights
    mix /= np.linalg.norm(mix)
    return Perturbation(du=sigma * mix, norm=float(sigma), kind="adversarial")


def adversarial_perturbation(s: Spectrum, sigma: float, top_k: int = 1) -> Perturbation:
    """sigma times the sqrt(lambda)-weighted unit mix of the top_k eigenvectors.

    For top_k == 1 this is sigma * v_1, the Rayleigh maximiser.
    """
    return _top_mix(s.eigenvalues, s.eigenvectors, sigma, top_k)


def adversarial_from_factor(factor: MetricFactor, sigma: float, top_k: int = 1) -> Perturbation:
    """Same construction from a (possibly low-rank) metric factor."""
    return _top_mix(factor.eigenvalues, factor.basis, sigma, top_k)


def functional_distance(spec: NetworkSpec, w: FlatWeights, du: np.ndarray, d: Dataset) -> float:
    """mean_x |f(x, w + du) - f(x, w)|^2, the finite counterpart of du^T g du."""
    base = forward_batch(spec, w, d.inputs)
    moved = forward_batch(spec, w.values + np.asarray(du), d.inputs)
    return float(np.mean(np.sum((moved - base) ** 2, axis=1)))


def worst_sign_accuracy(spec: NetworkSpec, w: FlatWeights, p: Perturbation, d: Dataset) -> Tuple[float, int]:
    """Accuracy under +du and -du; returns the lower one and its sign."""
    _, plus = evaluate(spec, w.values + p.du, d)
    _, minus = evaluate(spec, w.values - p.du, d)
    return (minus, -1) if minus < plus else (plus, 1)


# ==================== DELETION SWEEP ====================

@dataclass(frozen=True)
class SweepPoint:
    deleted: int
    fraction: float
    loss: float
    accuracy: float


def deletion_sweep(
    spec: NetworkSpec,
    w: FlatWeights,
    layer: int,
    d: Dataset,
    seed: int = 0,
    counts: Optional[Sequence[int]] = None,
) -> List[SweepPoint]:
    """Accuracy as more and more units of one hidden layer are deleted.

    Units are deleted cumulatively in a seeded random order.
    """
    if not 0 < layer < len(spec.layer_sizes) - 1:
        raise InvalidInputError(f"Layer {layer} is not a hidden layer of {spec.arch()}")
    size = spec.layer_sizes[layer]
    order = np.random.default_rng(seed).permutation(size)
    counts = list(range(size + 1)) if counts is None else sorted(set(int(c) for c in counts))
    if counts and (counts[0] < 0 or counts[-1] > size):
        raise InvalidInputError(f"Deletion counts must lie in [0, {size}]")
    points = []
    for count in counts:
        plan = node_deletion_plan(spec, layer, order[:count].tolist())
        loss, accuracy = evaluate(spec, apply_mask(w, plan), d)
        points.append(SweepPoint(deleted=count, fraction=count / size, loss=loss, accuracy=accuracy))
        logger.debug(f"Deleted {count}/{size} units of layer {layer}: accuracy {accuracy:.3f}")
    return points
