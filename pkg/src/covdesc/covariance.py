"""Covariance descriptors of feature-map stacks and their SPD regularization.

A tensor of ``m`` maps over ``n`` retained pixels becomes ``n``
observations in R^m (one per pixel, across maps). Their sample
covariance ``C = 1/(n-1) * sum (v_i - mu)(v_i - mu)^T`` is symmetric PSD
and typically rank-deficient (rank <= n-1); adding ``eps * I`` afterwards
makes it strictly positive definite. All computation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EigensolverError,
    MismatchError,
    NonFiniteValueError,
    NotPositiveSemidefiniteError,
    TooFewObservationsError,
)
from .regions import MappedRegion
from .tensorio import FeatureTensor


@dataclass(frozen=True)
class ObservationMatrix:
    """Columns are m-dimensional observations, one per retained pixel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"observations must be (m, n), got shape {arr.shape}")
        if arr.shape[1] < 2:
            raise TooFewObservationsError(
                f"need at least 2 observations for a sample covariance, got {arr.shape[1]}"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("observations contain NaN or Inf")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric strictly positive definite matrix with a known eigenvalue floor.

    ``epsilon`` records the shift applied by :func:`regularize`; every
    eigenvalue is at least ``epsilon`` up to rounding.
    """

    matrix: np.ndarray
    epsilon: float

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("SPD matrix contains NaN or Inf")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        scale = max(1.0, float(np.abs(arr).max()))
        if float(np.abs(arr - arr.T).max()) > 1e-8 * scale:
            raise MismatchError("matrix is not symmetric")
        object.__setattr__(self, "matrix", (arr + arr.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def tensor_to_observations(tensor: FeatureTensor,
                           region: MappedRegion | None = None) -> ObservationMatrix:
    """Vectorize a feature tensor into per-pixel observations.

    Without ``region``, all ``h*w`` pixels are retained in row-major
    order; observation ``i`` holds pixel ``i``'s value across all maps.
    With ``region``, only its feature-map cells are retained (in the
    region's canonical cell order).

    Raises
    ------
    MismatchError
        A region cell lies outside the tensor's map grid.
    TooFewObservationsError
        Fewer than two retained pixels.
    """
    m, h, w = tensor.data.shape
    flat = tensor.data.astype(np.float64).reshape(m, h * w)
    if region is None:
        return ObservationMatrix(flat)
    cols = region.cells[:, 0]
    rows = region.cells[:, 1]
    if (cols < 0).any() or (cols >= w).any() or (rows < 0).any() or (rows >= h).any():
        raise MismatchError(
            f"region {region.name!r} has cells outside the {w}x{h} map grid"
        )
    if region.size < 2:
        raise TooFewObservationsError(
            f"region {region.name!r} covers {region.size} cell(s); need at least 2"
        )
    return ObservationMatrix(flat[:, rows * w + cols])


def compute_covariance(obs: ObservationMatrix) -> np.ndarray:
    """Sample covariance with 1/(n-1) normalization, exactly symmetric.

    Two-pass (mean, then deviations) to avoid the cancellation of the
    E[xx^T] - mu mu^T form.
    """
    mu = obs.values.mean(axis=1, keepdims=True)
    centered = obs.values - mu
    cov = centered @ centered.T
    cov /= obs.count - 1
    return (cov + cov.T) / 2.0


def regularize(matrix: np.ndarray, epsilon: float) -> SpdMatrix:
    """Shift a PSD matrix to strict positive definiteness as ``C + eps*I``.

    The input must be symmetric and PSD up to a small negative eigenvalue
    tolerance (1e-10 relative to ``max(1, trace)``); genuine negative
    curvature indicates the input is not a covariance and is rejected.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteValueError("matrix contains NaN or Inf")
    scale = max(1.0, float(np.abs(arr).max()))
    if float(np.abs(arr - arr.T).max()) > 1e-8 * scale:
        raise MismatchError("matrix is not symmetric")
    sym = (arr + arr.T) / 2.0
    try:
        smallest = float(np.linalg.eigvalsh(sym)[0])
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigenvalue check failed: {exc}") from exc
    tolerance = 1e-10 * max(1.0, abs(float(np.trace(sym))))
    if smallest < -tolerance:
        raise NotPositiveSemidefiniteError(
            f"matrix has eigenvalue {smallest:.3e} below -{tolerance:.3e}"
        )
    shifted = sym.copy()
    shifted[np.diag_indices_from(shifted)] += epsilon
    return SpdMatrix(shifted, epsilon)
