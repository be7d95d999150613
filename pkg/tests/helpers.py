"""Shared test utilities: independent oracles and random matrix factories.

Oracles here are deliberately naive (double loops, scalar arithmetic) so
they stay independent of the vectorized implementations they check.
"""

from __future__ import annotations

import numpy as np

from covdesc.covariance import SpdMatrix


def random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-ish random orthogonal matrix via QR with a sign fix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def random_spd(rng: np.random.Generator, dim: int, condition: float = 100.0) -> SpdMatrix:
    """Random SPD matrix with eigenvalues log-spaced up to ``condition``."""
    q = random_orthogonal(rng, dim)
    if dim == 1:
        eigenvalues = np.array([1.0])
    else:
        eigenvalues = np.logspace(0.0, np.log10(condition), dim)
    matrix = (q * eigenvalues) @ q.T
    matrix = (matrix + matrix.T) / 2.0
    return SpdMatrix(matrix, float(eigenvalues.min()))


def spectral_exp(matrix: np.ndarray) -> np.ndarray:
    """Matrix exponential via eigendecomposition (test-only round-trip oracle)."""
    sym = (matrix + matrix.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    out = (vectors * np.exp(values)) @ vectors.T
    return (out + out.T) / 2.0


def covariance_oracle(observations: np.ndarray) -> np.ndarray:
    """Naive double-loop sample covariance with 1/(n-1) normalization."""
    dim, count = observations.shape
    mean = np.zeros(dim)
    for i in range(count):
        mean += observations[:, i]
    mean /= count
    cov = np.zeros((dim, dim))
    for i in range(count):
        deviation = observations[:, i] - mean
        for a in range(dim):
            for b in range(dim):
                cov[a, b] += deviation[a] * deviation[b]
    return cov / (count - 1)


def bilinear_oracle(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Scalar corner-aligned bilinear interpolation of one 2-D map."""
    h, w = grid.shape
    out = np.zeros((out_h, out_w))
    for r in range(out_h):
        sy = 0.0 if out_h == 1 else r * (h - 1) / (out_h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for c in range(out_w):
            sx = 0.0 if out_w == 1 else c * (w - 1) / (out_w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
            bottom = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
            out[r, c] = top * (1 - fy) + bottom * fy
    return out


def map_point_oracle(x: float, y: float, ratio: float, w_map: int, h_map: int):
    """Scalar round-half-up mapping with clamping."""
    col = int(np.floor(ratio * x + 0.5))
    row = int(np.floor(ratio * y + 0.5))
    col = 0 if col < 0 else (w_map - 1 if col > w_map - 1 else col)
    row = 0 if row < 0 else (h_map - 1 if row > h_map - 1 else row)
    return col, row
