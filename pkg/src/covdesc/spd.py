"""Symmetric eigendecomposition, matrix logarithm, log-Euclidean distance.

The matrix logarithm of an SPD matrix ``C = Q diag(l) Q^T`` is computed
spectrally as ``Q diag(ln l) Q^T``. The log-Euclidean distance between
two SPD matrices is the Frobenius norm of the difference of their
logarithms, which makes all pairwise distance work Euclidean once the
logarithms are cached.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import SpdMatrix
from .errors import EigensolverError, MismatchError, NonFiniteValueError

# Eigenvalue floor applied before ln as a final guard; regularization is
# expected to keep spectra far above this.
EIG_CLAMP = 1e-14


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending eigenvalues and the matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def sym_eig(matrix: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, deterministically signed.

    The input is symmetrized as ``(A + A^T)/2`` to absorb accumulated
    floating-point asymmetry. Each eigenvector is flipped so its
    largest-magnitude component is positive, making repeated
    decompositions of the same input bit-identical.
    """
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteValueError("matrix contains NaN or Inf")
    sym = (arr + arr.T) / 2.0
    try:
        values, vectors = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigendecomposition failed: {exc}") from exc
    lead = np.abs(vectors).argmax(axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return EigenDecomposition(values, vectors * signs)


def matrix_log(spd: SpdMatrix) -> np.ndarray:
    """Spectral matrix logarithm ``Q diag(ln l) Q^T`` of an SPD matrix.

    Eigenvalues are clamped below at ``EIG_CLAMP`` before the logarithm;
    a spectrum reaching below half the matrix's regularization floor is
    reported as a warning since it signals an input that was never
    properly regularized.
    """
    eig = sym_eig(spd.matrix)
    smallest = float(eig.eigenvalues[0])
    if smallest < spd.epsilon / 2.0:
        warnings.warn(
            f"eigenvalue {smallest:.3e} below half the regularization floor "
            f"{spd.epsilon:.1e}; clamping at {EIG_CLAMP:.0e}",
            RuntimeWarning,
            stacklevel=2,
        )
    log_values = np.log(np.maximum(eig.eigenvalues, EIG_CLAMP))
    out = (eig.eigenvectors * log_values) @ eig.eigenvectors.T
    return (out + out.T) / 2.0


def log_euclidean_distance(a: SpdMatrix, b: SpdMatrix) -> float:
    """Frobenius norm of ``log(a) - log(b)``; a metric on SPD matrices."""
    if a.dim != b.dim:
        raise MismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.linalg.norm(matrix_log(a) - matrix_log(b), "fro"))
