"""
Feedforward MLP in flat weight-space coordinates.

A network is a ``NetworkSpec`` (architecture) plus ``FlatWeights`` (one point
w in R^n). Layout per parameter layer l (sizes[l] -> sizes[l+1]): the weight
matrix row-major with shape (out, in), then the bias vector. Biases are part of
w and can be damaged like any other coordinate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..core.exceptions import InvalidInputError, NumericalFailureError

if TYPE_CHECKING:
    from ..formats.damage_plan import DamagePlan

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "relu", "linear"]
OutputMode = Literal["softmax", "identity"]


class NetworkSpec(BaseModel):
    """Layered MLP architecture f(x, w): R^k -> R^m."""

    model_config = ConfigDict(frozen=True)

    layer_sizes: Tuple[int, ...] = Field(description="k, hidden sizes..., m")
    hidden_activation: Activation = Field(
        default="tanh", description="Hidden nonlinearity; 'linear' exists for analytic oracles"
    )
    output_mode: OutputMode = Field(
        default="softmax", description="softmax probabilities (classification) or identity"
    )

    @field_validator("layer_sizes")
    @classmethod
    def _check_sizes(cls, sizes: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        return tuple(sizes)

    @classmethod
    def from_arch(cls, arch: str, activation: Activation = "tanh", output_mode: OutputMode = "softmax") -> "NetworkSpec":
        """Parse ``"k-h1-...-m"``."""
        try:
            sizes = tuple(int(part) for part in arch.strip().split("-"))
        except ValueError:
            raise InvalidInputError(f"Architecture must look like 'k-h-m', got '{arch}'")
        try:
            return cls(layer_sizes=sizes, hidden_activation=activation, output_mode=output_mode)
        except ValueError as e:
            raise InvalidInputError(f"Invalid architecture '{arch}': {e}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def depth(self) -> int:
        """Number of parameter layers."""
        return len(self.layer_sizes) - 1

    @property
    def layout(self) -> "WeightLayout":
        return _layout_for(self.layer_sizes)

    @property
    def n_params(self) -> int:
        return self.layout.n

    def arch(self) -> str:
        return "-".join(str(s) for s in self.layer_sizes)


@dataclass(frozen=True)
class WeightLayout:
    """Bijection between (layer, row, col) / (layer, bias-row) and flat indices."""

    sizes: Tuple[int, ...]
    offsets: Tuple[int, ...]
    n: int

    def weight_index(self, layer: int, row: int, col: int) -> int:
        n_in, n_out = self.sizes[layer], self.sizes[layer + 1]
        if not (0 <= row < n_out and 0 <= col < n_in):
            raise InvalidInputError(f"Weight ({layer}, {row}, {col}) outside a {n_out}x{n_in} layer")
        return self.offsets[layer] + row * n_in + col

    def bias_index(self, layer: int, row: int) -> int:
        n_in, n_out = self.sizes[layer], self.sizes[layer + 1]
        if not 0 <= row < n_out:
            raise InvalidInputError(f"Bias ({layer}, {row}) outside a layer of {n_out} units")
        return self.offsets[layer] + n_out * n_in + row

    def weight_slice(self, layer: int) -> slice:
        start = self.offsets[layer]
        return slice(start, start + self.sizes[layer] * self.sizes[layer + 1])

    def bias_slice(self, layer: int) -> slice:
        start = self.offsets[layer] + self.sizes[layer] * self.sizes[layer + 1]
        return slice(start, start + self.sizes[layer + 1])

    def unpack(self, values: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Per-layer (W, b) views into ``values``; W has shape (out, in)."""
        params = []
        for layer in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[layer], self.sizes[layer + 1]
            w = values[self.weight_slice(layer)].reshape(n_out, n_in)
            b = values[self.bias_slice(layer)]
            params.append((w, b))
        return params

    def index_map(self) -> Dict[Tuple, int]:
        mapping: Dict[Tuple, int] = {}
        for layer in range(len(self.sizes) - 1):
            for row in range(self.sizes[layer + 1]):
                for col in range(self.sizes[layer]):
                    mapping[("w", layer, row, col)] = self.weight_index(layer, row, col)
                mapping[("b", layer, row)] = self.bias_index(layer, row)
        return mapping


@lru_cache(maxsize=64)
def _layout_for(sizes: Tuple[int, ...]) -> WeightLayout:
    offsets = []
    total = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        offsets.append(total)
        total += (n_in + 1) * n_out
    return WeightLayout(sizes=sizes, offsets=tuple(offsets), n=total)


@dataclass(frozen=True)
class FlatWeights:
    """A point w in weight space. ``values`` is read-only."""

    values: np.ndarray
    spec: NetworkSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.shape[0] != self.spec.n_params:
            raise InvalidInputError(
                f"Weight vector has {values.shape[0]} entries, architecture {self.spec.arch()} needs {self.spec.n_params}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def layout(self) -> WeightLayout:
        return self.spec.layout

    def with_values(self, values: np.ndarray) -> "FlatWeights":
        return FlatWeights(values=values, spec=self.spec)


WeightsLike = Union[FlatWeights, np.ndarray]


@dataclass(frozen=True)
class JacobianBlock:
    """J[i, j] = d f_i / d w_j at one input."""

    matrix: np.ndarray
    input_id: Optional[int]
    base_point: FlatWeights


def as_vector(spec: NetworkSpec, w: WeightsLike) -> np.ndarray:
    """Raw float64 view of a weight point, dimension-checked."""
    values = w.values if isinstance(w, FlatWeights) else np.asarray(w, dtype=np.float64)
    if values.shape != (spec.n_params,):
        raise InvalidInputError(
            f"Weight vector has shape {values.shape}, expected ({spec.n_params},)"
        )
    return values


def init_weights(spec: NetworkSpec, seed: int) -> FlatWeights:
    """Gaussian weights with variance 1/fan_in, zero biases."""
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.n_params)
    layout = spec.layout
    for layer in range(spec.depth):
        fan_in = spec.layer_sizes[layer]
        sl = layout.weight_slice(layer)
        values[sl] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=sl.stop - sl.start)
    return FlatWeights(values=values, spec=spec)


# ==================== ACTIVATIONS ====================

def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


# ==================== FORWARD ====================

@dataclass
class ForwardCache:
    """Activations a_0..a_{L-1}, hidden pre-activations, logits and outputs."""

    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    logits: np.ndarray
    outputs: np.ndarray


def _check_inputs(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"Inputs have shape {x.shape}, expected (batch, {spec.input_dim})"
        )
    return x


def forward_cache(spec: NetworkSpec, w: WeightsLike, x: np.ndarray) -> ForwardCache:
    values = as_vector(spec, w)
    a = _check_inputs(spec, x)
    params = spec.layout.unpack(values)
    activations = [a]
    pre_activations: List[np.ndarray] = []
    for layer, (weight, bias) in enumerate(params):
        z = a @ weight.T + bias
        if not np.all(np.isfinite(z)):
            raise NumericalFailureError(
                f"Non-finite pre-activation in layer {layer + 1}", {"layer": layer + 1}
            )
        if layer < spec.depth - 1:
            a = _activate(spec.hidden_activation, z)
            pre_activations.append(z)
            activations.append(a)
        else:
            logits = z
    outputs = softmax(logits) if spec.output_mode == "softmax" else logits
    if not np.all(np.isfinite(outputs)):
        raise NumericalFailureError(
            f"Non-finite output in layer {spec.depth}", {"layer": spec.depth}
        )
    return ForwardCache(activations, pre_activations, logits, outputs)


def forward_batch(spec: NetworkSpec, w: WeightsLike, x: np.ndarray) -> np.ndarray:
    """Outputs for a batch of inputs, shape (batch, m)."""
    return forward_cache(spec, w, x).outputs


def forward(spec: NetworkSpec, w: WeightsLike, x: np.ndarray) -> np.ndarray:
    """f(x, w) for a single input vector of length k."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise InvalidInputError(f"Input has shape {x.shape}, expected ({spec.input_dim},)")
    return forward_batch(spec, w, x[None, :])[0]


# ==================== DERIVATIVES ====================

def _output_seed(spec: NetworkSpec, cache: ForwardCache) -> np.ndarray:
    """d f_i / d logits_r per example, shape (batch, m, m)."""
    batch, m = cache.outputs.shape
    if spec.output_mode == "identity":
        return np.broadcast_to(np.eye(m), (batch, m, m)).copy()
    p = cache.outputs
    return p[:, :, None] * (np.eye(m)[None, :, :] - p[:, None, :])


def _reverse_sweeps(spec: NetworkSpec, values: np.ndarray, cache: ForwardCache, seed: np.ndarray) -> np.ndarray:
    """Back-propagate ``seed`` (batch, r, m) through the network.

    Returns d(seed-weighted logits)/dw with shape (batch, r, n); each of the r
    rows is one reverse sweep.
    """
    layout = spec.layout
    params = layout.unpack(values)
    batch, rows = seed.shape[0], seed.shape[1]
    out = np.zeros((batch, rows, layout.n))
    delta = seed
    for layer in range(spec.depth - 1, -1, -1):
        weight, _ = params[layer]
        a_in = cache.activations[layer]
        out[:, :, layout.weight_slice(layer)] = np.einsum("bro,bc->broc", delta, a_in).reshape(batch, rows, -1)
        out[:, :, layout.bias_slice(layer)] = delta
        if layer > 0:
            z = cache.pre_activations[layer - 1]
            grad = _activation_grad(spec.hidden_activation, z, cache.activations[layer])
            delta = np.einsum("bro,oc->brc", delta, weight) * grad[:, None, :]
    return out


def jacobian_batch(spec: NetworkSpec, w: WeightsLike, x: np.ndarray) -> np.ndarray:
    """Per-example Jacobians, shape (batch, m, n), via m reverse sweeps each."""
    values = as_vector(spec, w)
    cache = forward_cache(spec, values, x)
    jac = _reverse_sweeps(spec, values, cache, _output_seed(spec, cache))
    if not np.all(np.isfinite(jac)):
        raise NumericalFailureError("Non-finite Jacobian entries")
    return jac


def jacobian(spec: NetworkSpec, w: FlatWeights, x: np.ndarray, input_id: Optional[int] = None) -> JacobianBlock:
    """Exact Jacobian of f(x, .) at w (at the realized ReLU pattern)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise InvalidInputError(f"Input has shape {x.shape}, expected ({spec.input_dim},)")
    matrix = jacobian_batch(spec, w, x[None, :])[0]
    matrix.setflags(write=False)
    return JacobianBlock(matrix=matrix, input_id=input_id, base_point=w)


def jvp(spec: NetworkSpec, w: WeightsLike, x: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Directional derivative J_x du for every input, shape (batch, m).

    Forward-mode tangent propagation; never forms J.
    """
    values = as_vector(spec, w)
    du = as_vector(spec, du)
    cache = forward_cache(spec, values, x)
    params = spec.layout.unpack(values)
    tangents = spec.layout.unpack(du)
    da = np.zeros_like(cache.activations[0])
    for layer, ((weight, _), (d_weight, d_bias)) in enumerate(zip(params, tangents)):
        dz = cache.activations[layer] @ d_weight.T + da @ weight.T + d_bias
        if layer < spec.depth - 1:
            grad = _activation_grad(
                spec.hidden_activation, cache.pre_activations[layer], cache.activations[layer + 1]
            )
            da = grad * dz
    if spec.output_mode == "softmax":
        p = cache.outputs
        return p * (dz - np.sum(p * dz, axis=1, keepdims=True))
    return dz


def parameter_gradient(
    spec: NetworkSpec,
    w: WeightsLike,
    x: np.ndarray,
    d_logits: np.ndarray,
    cache: Optional[ForwardCache] = None,
) -> np.ndarray:
    """Sum over the batch of d_logits^T d(logits)/dw, shape (n,)."""
    values = as_vector(spec, w)
    if cache is None:
        cache = forward_cache(spec, values, x)
    return _reverse_sweeps(spec, values, cache, d_logits[:, None, :])[:, 0, :].sum(axis=0)


# ==================== DAMAGE MASKS ====================

def apply_mask(w: FlatWeights, plan: "DamagePlan") -> FlatWeights:
    """Copy of w with the plan's indices set exactly to zero."""
    indices = np.asarray(plan.indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= w.n):
        raise InvalidInputError(
            f"Damage plan index out of range for n={w.n}",
            {"max_index": int(indices.max()), "n": w.n},
        )
    values = np.array(w.values, copy=True)
    values[indices] = 0.0
    return w.with_values(values)
