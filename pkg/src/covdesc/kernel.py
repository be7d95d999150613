"""Gaussian RBF kernel on SPD matrices via cached matrix logarithms.

``K(C1, C2) = exp(-gamma * d^2(C1, C2))`` with ``d`` the log-Euclidean
distance is positive definite for every ``gamma > 0``. Each descriptor's
matrix logarithm is computed once and carried in a :class:`LogDescriptor`,
so building an n x n Gram matrix costs n eigendecompositions instead of
n^2.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covariance import SpdMatrix
from .errors import FormatError, MismatchError, NonFiniteValueError
from .spd import matrix_log
from .tensorio import FeatureTensor, load_feature_tensor, save_feature_tensor

GLOBAL_REGION = "global"

_TINY = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class LogDescriptor:
    """Matrix logarithm of one sample's regularized covariance descriptor."""

    sample_id: str
    region: str
    logc: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.logc, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"log descriptor must be square, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValueError(f"log descriptor {self.sample_id!r} contains NaN or Inf")
        scale = max(1.0, float(np.abs(arr).max()))
        if float(np.abs(arr - arr.T).max()) > 1e-8 * scale:
            raise MismatchError(f"log descriptor {self.sample_id!r} is not symmetric")
        object.__setattr__(self, "logc", (arr + arr.T) / 2.0)

    @classmethod
    def from_spd(cls, sample_id: str, region: str, spd: SpdMatrix) -> "LogDescriptor":
        return cls(sample_id, region, matrix_log(spd))

    @property
    def dim(self) -> int:
        return self.logc.shape[0]


@dataclass(frozen=True)
class GramMatrix:
    """Kernel matrix between two descriptor collections, with provenance."""

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray
    gamma: float
    region: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (len(self.rows), len(self.cols)):
            raise MismatchError(
                f"values shape {arr.shape} does not match "
                f"{len(self.rows)} rows x {len(self.cols)} cols"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("Gram matrix contains NaN or Inf")
        if (arr <= 0).any() or (arr > 1).any():
            raise ValueError("Gram entries must lie in (0, 1]")
        if self.rows == self.cols:
            if not np.array_equal(arr, arr.T):
                raise MismatchError("square Gram matrix is not exactly symmetric")
            if not (np.diag(arr) == 1.0).all():
                raise ValueError("square Gram matrix must have a unit diagonal")
        object.__setattr__(self, "values", arr)

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols


def _check_collection(descriptors, label: str) -> tuple[str, int]:
    if not descriptors:
        raise ValueError(f"{label}: empty descriptor list")
    region = descriptors[0].region
    dim = descriptors[0].dim
    for d in descriptors:
        if d.region != region:
            raise MismatchError(f"{label}: mixed regions {region!r} and {d.region!r}")
        if d.dim != dim:
            raise MismatchError(f"{label}: mixed dims {dim} and {d.dim}")
    return region, dim


def squared_log_distance(a: LogDescriptor, b: LogDescriptor) -> float:
    """Squared log-Euclidean distance from cached logarithms."""
    if a.dim != b.dim:
        raise MismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.region != b.region:
        raise MismatchError(f"region mismatch: {a.region!r} vs {b.region!r}")
    diff = a.logc - b.logc
    return float(np.sum(diff * diff))


def rbf_kernel(a: LogDescriptor, b: LogDescriptor, gamma: float) -> float:
    """``exp(-gamma * ||log C_a - log C_b||_F^2)``; lies in (0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return max(float(np.exp(-gamma * squared_log_distance(a, b))), _TINY)


def pairwise_squared_distances(descriptors, others=None) -> np.ndarray:
    """All squared log-Euclidean distances between two descriptor lists.

    With ``others=None`` the single-list result is exactly symmetric with
    a zero diagonal. Distances are computed via inner products of the
    stacked logarithms, which is accurate for the well-scaled descriptors
    this pipeline produces; tiny negative rounding residues are clamped
    to zero.
    """
    _check_collection(descriptors, "descriptors")
    flat = np.stack([d.logc.ravel() for d in descriptors])
    if others is None:
        gram = flat @ flat.T
        gram = (gram + gram.T) / 2.0
        norms = np.diag(gram)
        d2 = norms[:, None] + norms[None, :] - 2.0 * gram
        np.fill_diagonal(d2, 0.0)
        return np.maximum(d2, 0.0)
    region, dim = _check_collection(others, "others")
    if region != descriptors[0].region:
        raise MismatchError(f"region mismatch: {descriptors[0].region!r} vs {region!r}")
    if dim != descriptors[0].dim:
        raise MismatchError(f"dimension mismatch: {descriptors[0].dim} vs {dim}")
    flat_b = np.stack([d.logc.ravel() for d in others])
    cross = flat @ flat_b.T
    norms_a = np.sum(flat * flat, axis=1)
    norms_b = np.sum(flat_b * flat_b, axis=1)
    d2 = norms_a[:, None] + norms_b[None, :] - 2.0 * cross
    return np.maximum(d2, 0.0)


def gram_matrix(a_descriptors, b_descriptors=None, *, gamma: float) -> GramMatrix:
    """Pairwise RBF kernel values between two descriptor collections.

    When ``b_descriptors`` is None or the very same list, the square Gram
    is built from one triangle and is exactly symmetric with a unit
    diagonal; by positive definiteness of the kernel its eigenvalues are
    nonnegative up to rounding.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    region, _ = _check_collection(a_descriptors, "a_descriptors")
    symmetric = b_descriptors is None or b_descriptors is a_descriptors
    if symmetric:
        d2 = pairwise_squared_distances(a_descriptors)
        ids = tuple(d.sample_id for d in a_descriptors)
        values = np.maximum(np.exp(-gamma * d2), _TINY)
        values = np.triu(values, 1)
        values = values + values.T
        np.fill_diagonal(values, 1.0)
        return GramMatrix(ids, ids, values, float(gamma), region)
    d2 = pairwise_squared_distances(a_descriptors, b_descriptors)
    rows = tuple(d.sample_id for d in a_descriptors)
    cols = tuple(d.sample_id for d in b_descriptors)
    values = np.maximum(np.exp(-gamma * d2), _TINY)
    return GramMatrix(rows, cols, values, float(gamma), region)


def video_distance(frames_a, frames_b, *, paired: bool = False) -> float:
    """Mean log-Euclidean distance between the frames of two videos.

    By default the mean runs over all ``|A| * |B|`` cross pairs, which is
    symmetric and independent of frame order. ``paired=True`` instead
    averages frame-index-matched pairs and requires equal lengths.
    """
    _check_collection(frames_a, "frames_a")
    _check_collection(frames_b, "frames_b")
    if frames_a[0].region != frames_b[0].region:
        raise MismatchError(
            f"region mismatch: {frames_a[0].region!r} vs {frames_b[0].region!r}"
        )
    if frames_a[0].dim != frames_b[0].dim:
        raise MismatchError(f"dimension mismatch: {frames_a[0].dim} vs {frames_b[0].dim}")
    if paired:
        if len(frames_a) != len(frames_b):
            raise MismatchError(
                f"paired videos need equal frame counts, got {len(frames_a)} and {len(frames_b)}"
            )
        total = math.fsum(
            float(np.linalg.norm(a.logc - b.logc, "fro"))
            for a, b in zip(frames_a, frames_b)
        )
        return total / len(frames_a)
    # fsum is order-independent, so the all-pairs mean is exactly symmetric
    total = math.fsum(
        float(np.linalg.norm(a.logc - b.logc, "fro"))
        for a in frames_a
        for b in frames_b
    )
    return total / (len(frames_a) * len(frames_b))


def video_kernel_row(frames, train_descriptors, gamma: float) -> np.ndarray:
    """Kernel values between one video and each training descriptor.

    Lifts the frame distances to the video level first, then applies the
    Gaussian: ``exp(-gamma * mean_distance^2)``.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    row = np.empty(len(train_descriptors))
    for j, train in enumerate(train_descriptors):
        dist = video_distance(frames, [train])
        row[j] = np.exp(-gamma * dist * dist)
    return np.maximum(row, _TINY)


def save_gram(gram: GramMatrix, path) -> None:
    """Persist a Gram matrix as an FMT1 container plus a JSON sidecar.

    The container stores the values as ``(n_rows, n_cols, 1)`` float32;
    the sidecar records row/col sample ids, gamma, and region.
    """
    path = Path(path)
    tensor = FeatureTensor(gram.values[:, :, None].astype(np.float32))
    save_feature_tensor(tensor, path)
    sidecar = {
        "rows": list(gram.rows),
        "cols": list(gram.cols),
        "gamma": gram.gamma,
        "region": gram.region,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def load_gram(path) -> GramMatrix:
    """Load a Gram cache written by :func:`save_gram`.

    Entries that underflowed float32 storage are floored at the smallest
    positive float32 with a warning.
    """
    path = Path(path)
    try:
        meta = json.loads(_sidecar_path(path).read_text())
        rows = tuple(str(r) for r in meta["rows"])
        cols = tuple(str(c) for c in meta["cols"])
        gamma = float(meta["gamma"])
        region = str(meta["region"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable Gram sidecar ({exc})") from exc
    tensor = load_feature_tensor(path)
    if tensor.width != 1 or (tensor.maps, tensor.height) != (len(rows), len(cols)):
        raise FormatError(
            f"{path}: container dims ({tensor.maps}, {tensor.height}, {tensor.width}) "
            f"do not match sidecar ({len(rows)} x {len(cols)})"
        )
    values = tensor.data[:, :, 0].astype(np.float64)
    if (values <= 0).any():
        warnings.warn(
            f"{path}: {(values <= 0).sum()} entries underflowed float32 storage; flooring",
            RuntimeWarning,
            stacklevel=2,
        )
        values = np.maximum(values, float(np.finfo(np.float32).tiny))
    return GramMatrix(rows, cols, values, gamma, region)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


__all__ = [
    "GLOBAL_REGION",
    "GramMatrix",
    "LogDescriptor",
    "gram_matrix",
    "load_gram",
    "pairwise_squared_distances",
    "rbf_kernel",
    "save_gram",
    "squared_log_distance",
    "video_distance",
    "video_kernel_row",
]
