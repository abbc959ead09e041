"""
Pullback metric g = mean_x J_x^T J_x on weight space.

Dense assembly is capped (O(n^2) memory, O(n^3) eigensolve); the matrix-free
quadratic form and the low-rank factorisation work at any n.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np

from ..config import config
from ..core.exceptions import CapacityError, InvalidInputError, NumericalFailureError
from ..core.linalg import EigenDecomposition, SymMatrix, canonical_signs, sym_eigen
from ..core.parallel import ordered_map
from ..formats.reports import SpectrumSummary
from ..model.dataset import Dataset
from ..model.network import FlatWeights, NetworkSpec, WeightsLike, as_vector, jacobian_batch, jvp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricTensor:
    """g averaged over a batch, accumulated in ascending example-id order."""

    g: SymMatrix
    base_point: FlatWeights
    batch_ids: Tuple[int, ...]
    spec: NetworkSpec

    @property
    def n(self) -> int:
        return self.g.dim


@dataclass(frozen=True)
class Spectrum:
    """Eigen-spectrum of g with the resilient/vulnerable split."""

    decomposition: EigenDecomposition
    vulnerable_count: int
    resilient_count: int
    rho: float
    threshold: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomposition.eigenvalues

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.decomposition.eigenvectors

    @property
    def n(self) -> int:
        return self.decomposition.dim

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0])


def _example_jacobians(spec: NetworkSpec, w: WeightsLike, batch: Dataset, threads: Optional[int]) -> Tuple[Dataset, list]:
    ordered = batch.sorted_by_id()
    values = as_vector(spec, w)
    blocks = ordered_map(
        lambda i: jacobian_batch(spec, values, ordered.inputs[i:i + 1])[0],
        range(len(ordered)),
        threads,
    )
    return ordered, blocks


def assemble_metric(spec: NetworkSpec, w: FlatWeights, batch: Dataset, threads: Optional[int] = None) -> MetricTensor:
    """Dense g at w averaged over ``batch``.

    Per-example Jacobians may be computed in parallel; the sum is always
    taken sequentially in ascending id order.
    """
    n = spec.n_params
    if n > config.metric_cap:
        raise CapacityError(n, config.metric_cap, "use quadratic_form_matfree or the low-rank metric factor")
    ordered, blocks = _example_jacobians(spec, w, batch, threads)
    g = np.zeros((n, n))
    for jac in blocks:
        g += jac.T @ jac
    g /= len(blocks)
    if not np.all(np.isfinite(g)):
        raise NumericalFailureError("Non-finite metric entries", {"n": n})
    logger.debug(f"Assembled {n}x{n} metric over {len(blocks)} examples")
    return MetricTensor(
        g=SymMatrix(g),
        base_point=w if isinstance(w, FlatWeights) else FlatWeights(values=w, spec=spec),
        batch_ids=tuple(int(i) for i in ordered.ids),
        spec=spec,
    )


def quadratic_form(gt: MetricTensor, du: np.ndarray) -> float:
    """du^T g du."""
    du = np.asarray(du, dtype=np.float64)
    if du.shape != (gt.n,):
        raise InvalidInputError(f"Perturbation has shape {du.shape}, expected ({gt.n},)")
    return float(du @ gt.g.matvec(du))


def quadratic_form_matfree(spec: NetworkSpec, w: WeightsLike, batch: Dataset, du: np.ndarray) -> float:
    """mean_x |J_x du|^2 via forward-mode directional derivatives; g is never formed."""
    du = np.asarray(du, dtype=np.float64)
    if du.shape != (spec.n_params,):
        raise InvalidInputError(f"Perturbation has shape {du.shape}, expected ({spec.n_params},)")
    ordered = batch.sorted_by_id()
    directional = jvp(spec, w, ordered.inputs, du)
    return float(np.mean(np.sum(directional * directional, axis=1)))


def spectrum(gt: MetricTensor, threshold: Optional[float] = None) -> Spectrum:
    """Eigenpairs of g; eigenvalues at exactly the threshold count as vulnerable."""
    threshold = config.vulnerable_threshold if threshold is None else threshold
    decomposition = sym_eigen(gt.g)
    vulnerable = int(np.count_nonzero(decomposition.eigenvalues >= threshold))
    return Spectrum(
        decomposition=decomposition,
        vulnerable_count=vulnerable,
        resilient_count=decomposition.dim - vulnerable,
        rho=vulnerable / decomposition.dim,
        threshold=threshold,
    )


def gaussian_expectation(gt: MetricTensor, sigma: float, convention: Optional[str] = None) -> float:
    """Expected du^T g du under a zero-mean Gaussian du.

    ``variance``: each coordinate ~ N(0, sigma^2/n), so E|du|^2 = sigma^2.
    ``printed``: each coordinate has variance sigma/n.
    """
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    convention = convention or config.gaussian_convention
    trace = float(np.trace(gt.g.entries))
    if convention == "printed":
        return sigma / gt.n * trace
    return sigma * sigma / gt.n * trace


def gaussian_upper_bound(s: Spectrum, sigma: float) -> float:
    """sigma^2 * rho_lambda * lambda_1 with rho_lambda = sum(lambda) / (n * lambda_1)."""
    if s.lambda_1 <= 0:
        return 0.0
    rho_lambda = float(np.sum(s.eigenvalues)) / (s.n * s.lambda_1)
    return sigma * sigma * rho_lambda * s.lambda_1


def spectrum_summary(s: Spectrum) -> SpectrumSummary:
    eigenvalues = s.eigenvalues
    lambda_1 = float(eigenvalues[0])
    trace = float(np.sum(eigenvalues))
    return SpectrumSummary(
        n=s.n,
        rho=s.rho,
        lambda_1=lambda_1,
        lambda_min=float(eigenvalues[-1]),
        trace=trace,
        threshold=s.threshold,
        vulnerable_count=s.vulnerable_count,
        resilient_count=s.resilient_count,
        rho_lambda=trace / (s.n * lambda_1) if lambda_1 > 0 else 0.0,
    )


# ==================== FACTORISED METRIC ====================

@dataclass(frozen=True)
class MetricFactor:
    """g = basis diag(eigenvalues) basis^T, plus a zero-eigenvalue complement when low-rank.

    ``matvec`` applies g exactly (dense matrix or stacked Jacobian).
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    has_complement: bool
    matvec: Callable[[np.ndarray], np.ndarray]
    batch_ids: Tuple[int, ...]
    mode: str

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0]) if self.eigenvalues.size else 0.0


def factor_from_matrix(g: Union[np.ndarray, SymMatrix], batch_ids: Tuple[int, ...] = ()) -> MetricFactor:
    """Dense factor of an explicit symmetric PSD matrix."""
    sym = g if isinstance(g, SymMatrix) else SymMatrix(g)
    decomposition = sym_eigen(sym)
    return MetricFactor(
        eigenvalues=np.clip(decomposition.eigenvalues, 0.0, None),
        basis=decomposition.eigenvectors,
        has_complement=False,
        matvec=sym.matvec,
        batch_ids=batch_ids,
        mode="dense",
    )


def metric_factor(
    spec: NetworkSpec,
    w: WeightsLike,
    batch: Dataset,
    mode: Literal["auto", "dense", "lowrank"] = "auto",
    threads: Optional[int] = None,
) -> MetricFactor:
    """Eigen-factorisation of g at w.

    ``lowrank`` takes the thin SVD of the stacked, 1/sqrt(B)-scaled Jacobian
    (rank <= m*B), valid at any n. ``auto`` picks it whenever m*B < n or n is
    over the dense cap.
    """
    n = spec.n_params
    ordered, blocks = _example_jacobians(spec, w, batch, threads)
    rows = spec.output_dim * len(blocks)
    if mode == "auto":
        mode = "lowrank" if (rows < n or n > config.metric_cap) else "dense"
    batch_ids = tuple(int(i) for i in ordered.ids)

    if mode == "dense":
        if n > config.metric_cap:
            raise CapacityError(n, config.metric_cap, "use the low-rank metric factor")
        g = np.zeros((n, n))
        for jac in blocks:
            g += jac.T @ jac
        g /= len(blocks)
        return factor_from_matrix(g, batch_ids)

    stack = np.concatenate(blocks, axis=0) / np.sqrt(len(blocks))
    if not np.all(np.isfinite(stack)):
        raise NumericalFailureError("Non-finite Jacobian entries in metric factor", {"n": n})
    try:
        _, singular, vt = np.linalg.svd(stack, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError(f"SVD did not converge for {stack.shape} Jacobian stack", {"reason": str(e)})
    basis = canonical_signs(vt.T)
    logger.debug(f"Low-rank metric factor: rank {basis.shape[1]} of n={n}")
    return MetricFactor(
        eigenvalues=singular * singular,
        basis=basis,
        has_complement=basis.shape[1] < n,
        matvec=lambda x: stack.T @ (stack @ x),
        batch_ids=batch_ids,
        mode="lowrank",
    )
