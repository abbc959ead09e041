"""
Dense symmetric linear algebra kernels.

All arrays are float64. Matrices are immutable once wrapped; the eigensolver is
LAPACK's symmetric driver (``numpy.linalg.eigh``), which is deterministic for
a given input and build.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..config import config
from .exceptions import CapacityError, InvalidInputError, NumericalFailureError, SingularMatrixError

logger = logging.getLogger(__name__)

EIGEN_DIM_CAP = 5000


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric matrix; the upper triangle is mirrored on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"SymMatrix needs a square 2-D array, got shape {a.shape}")
        if a.shape[0] < 1:
            raise InvalidInputError("SymMatrix dimension must be >= 1")
        mirrored = np.triu(a) + np.triu(a, 1).T
        object.__setattr__(self, "entries", _frozen(mirrored))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "SymMatrix":
        return cls(np.eye(dim))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.entries @ x

    def upper_triangle(self) -> np.ndarray:
        """Row-major upper triangle (diagonal included)."""
        return self.entries[np.triu_indices(self.dim)]


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs sorted by descending eigenvalue; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude component is positive.

    Ties resolve to the lowest index (``argmax`` returns the first maximum).
    """
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigen(a: SymMatrix) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending."""
    if a.dim < 1:
        raise InvalidInputError("Cannot decompose a matrix of dimension 0")
    if a.dim > EIGEN_DIM_CAP:
        raise CapacityError(a.dim, EIGEN_DIM_CAP, "dense eigensolve is limited to desk-scale networks")
    if not np.all(np.isfinite(a.entries)):
        raise NumericalFailureError(
            f"Non-finite entries in {a.dim}x{a.dim} matrix passed to eigensolver", {"dim": a.dim}
        )
    try:
        values, vectors = np.linalg.eigh(a.entries)
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError(
            f"Eigensolver did not converge for {a.dim}x{a.dim} matrix", {"dim": a.dim, "reason": str(e)}
        )
    order = np.argsort(values, kind="stable")[::-1]
    values = values[order]
    vectors = canonical_signs(vectors[:, order])
    logger.debug(f"Eigendecomposition of {a.dim}x{a.dim}: lambda_1={values[0]:.3e}")
    return EigenDecomposition(eigenvalues=values, eigenvectors=vectors)


def solve_shifted(a: SymMatrix, mu: float, b: np.ndarray) -> np.ndarray:
    """Solve ``(A + mu I) x = b``."""
    b = np.asarray(b, dtype=np.float64)
    if mu < 0:
        raise InvalidInputError(f"Shift mu must be non-negative, got {mu}")
    if b.shape != (a.dim,):
        raise InvalidInputError(f"Right-hand side has shape {b.shape}, expected ({a.dim},)")

    shifted = a.entries + mu * np.eye(a.dim)
    try:
        x = np.linalg.solve(shifted, b)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(a.dim, mu)

    if not np.all(np.isfinite(x)):
        raise SingularMatrixError(a.dim, mu)

    if config.verify_residuals:
        residual = np.linalg.norm(shifted @ x - b)
        bound = 1e-9 * np.linalg.norm(b)
        if residual > bound:
            if mu == 0:
                raise SingularMatrixError(a.dim, mu)
            raise NumericalFailureError(
                f"Shifted solve residual {residual:.3e} exceeds {bound:.3e}",
                {"dim": a.dim, "mu": mu},
            )
    return x
