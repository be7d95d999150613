"""Input-image to feature-map coordinate mapping and facial region construction.

A point ``(x, y)`` on the input image lands on feature-map cell
``(round(s*x), round(s*y))`` where ``s`` is the map size ratio with
respect to the input and rounding is half-up. Rounded coordinates that
fall outside the map are clamped so border landmarks never abort a
pipeline.

The 49-landmark layout follows the common brows / nose / eyes / mouth
ordering (5+5 brows, 4 nose ridge, 5 nose base, 6+6 eyes, 12 outer +
6 inner mouth).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRegionError, MismatchError

LANDMARK_COUNT = 49
EYEBROW_LEFT = slice(0, 5)
EYEBROW_RIGHT = slice(5, 10)
NOSE_RIDGE = slice(10, 14)
NOSE_BASE = slice(14, 19)
EYE_LEFT = slice(19, 25)
EYE_RIGHT = slice(25, 31)
MOUTH = slice(31, 49)

DEFAULT_REGION_NAMES = ("eyes", "mouth", "cheek_left", "cheek_right")


@dataclass(frozen=True)
class Region:
    """A named set of input-image pixel coordinates.

    ``pixels`` is an ``(r, 2)`` integer array of unique ``(x, y)`` pairs
    in a canonical (lexicographic) order, so construction from any
    enumeration of the same pixel set yields an identical Region.
    """

    name: str
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise ValueError(f"region {self.name!r}: pixels must be a non-empty (r, 2) array")
        object.__setattr__(self, "pixels", np.unique(arr, axis=0))

    @classmethod
    def from_box(cls, name: str, x0: int, y0: int, x1: int, y1: int) -> "Region":
        """Region covering the inclusive pixel rectangle ``[x0..x1] x [y0..y1]``."""
        if x1 < x0 or y1 < y0:
            raise DegenerateRegionError(f"region {name!r}: empty box ({x0},{y0})-({x1},{y1})")
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        return cls(name, np.column_stack([xs.ravel(), ys.ravel()]))

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class MappedRegion:
    """Feature-map cells covered by a region, with the ratio that produced them.

    ``cells`` is a ``(k, 2)`` integer array of unique ``(col, row)`` pairs
    sorted row-major; ``k`` may be smaller than the source pixel count
    because distinct pixels collapse onto shared cells.
    """

    name: str
    cells: np.ndarray
    source_ratio: float

    def __post_init__(self):
        arr = np.asarray(self.cells, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise ValueError(f"mapped region {self.name!r}: cells must be non-empty (k, 2)")
        object.__setattr__(self, "cells", arr)

    @property
    def size(self) -> int:
        return self.cells.shape[0]


def map_point(p, ratio: float, map_dims) -> tuple[int, int]:
    """Map one input-image point to a feature-map cell.

    Parameters
    ----------
    p : (x, y)
        Input-image coordinates.
    ratio : float
        Map size ratio with respect to the input size (e.g. 1/16).
    map_dims : (w_map, h_map)
        Feature-map extent used for clamping.

    Returns
    -------
    (col, row)
        ``round(ratio*x), round(ratio*y)`` with round-half-up, clamped
        into ``[0, w_map-1] x [0, h_map-1]``.
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    x, y = p
    w_map, h_map = map_dims
    col = min(max(int(math.floor(ratio * x + 0.5)), 0), w_map - 1)
    row = min(max(int(math.floor(ratio * y + 0.5)), 0), h_map - 1)
    return col, row


def map_points(points: np.ndarray, ratio: float, map_dims) -> np.ndarray:
    """Vectorized :func:`map_point` over an ``(n, 2)`` coordinate array."""
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    w_map, h_map = map_dims
    pts = np.asarray(points, dtype=np.float64)
    cells = np.floor(ratio * pts + 0.5).astype(np.int64)
    cells[:, 0] = np.clip(cells[:, 0], 0, w_map - 1)
    cells[:, 1] = np.clip(cells[:, 1], 0, h_map - 1)
    return cells


def map_region(region: Region, ratio: float, map_dims) -> MappedRegion:
    """Project a region's pixel set onto feature-map cells, deduplicated.

    The result is independent of the enumeration order of the source
    pixels; cells are sorted row-major.
    """
    w_map, _ = map_dims
    cells = map_points(region.pixels, ratio, map_dims)
    encoded = np.unique(cells[:, 1] * w_map + cells[:, 0])
    decoded = np.column_stack([encoded % w_map, encoded // w_map])
    return MappedRegion(region.name, decoded, float(ratio))


def _padded_box(name: str, points: np.ndarray, pad: float,
                extent: tuple[int, int]) -> Region:
    width, height = extent
    x0 = max(int(math.floor(points[:, 0].min() - pad)), 0)
    x1 = min(int(math.ceil(points[:, 0].max() + pad)), width - 1)
    y0 = max(int(math.floor(points[:, 1].min() - pad)), 0)
    y1 = min(int(math.ceil(points[:, 1].max() + pad)), height - 1)
    if x1 < x0 or y1 < y0:
        raise DegenerateRegionError(f"region {name!r}: zero-area box")
    return Region.from_box(name, x0, y0, x1, y1)


def _corner_box(name: str, p: np.ndarray, q: np.ndarray,
                extent: tuple[int, int]) -> Region:
    width, height = extent
    x0 = max(int(math.floor(min(p[0], q[0]))), 0)
    x1 = min(int(math.ceil(max(p[0], q[0]))), width - 1)
    y0 = max(int(math.floor(min(p[1], q[1]))), 0)
    y1 = min(int(math.ceil(max(p[1], q[1]))), height - 1)
    if x1 < x0 or y1 < y0:
        raise DegenerateRegionError(f"region {name!r}: zero-area box")
    return Region.from_box(name, x0, y0, x1, y1)


def build_default_regions(landmarks, input_extent) -> list[Region]:
    """Construct the four facial regions from 49 landmarks.

    The eyes region is the bounding box of the brow and eye landmarks,
    the mouth region the bounding box of the mouth landmarks, both padded
    by 10% of the inter-ocular distance. Each cheek region is the
    rectangle spanned by the outer eye corner and the mouth corner on
    that side. The construction is deterministic and equivariant under
    integer translations that keep the boxes inside the extent.
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (LANDMARK_COUNT, 2):
        raise ValueError(f"expected {LANDMARK_COUNT} landmarks, got shape {lm.shape}")
    width, height = input_extent
    if (lm[:, 0] < 0).any() or (lm[:, 0] >= width).any() \
            or (lm[:, 1] < 0).any() or (lm[:, 1] >= height).any():
        raise ValueError(f"landmarks outside input extent {width}x{height}")

    left_eye = lm[EYE_LEFT]
    right_eye = lm[EYE_RIGHT]
    interocular = float(np.linalg.norm(right_eye.mean(axis=0) - left_eye.mean(axis=0)))
    if interocular <= 1e-9:
        raise DegenerateRegionError("coincident eye centers; cannot scale region padding")
    pad = 0.10 * interocular

    eye_points = np.vstack([lm[EYEBROW_LEFT], lm[EYEBROW_RIGHT], left_eye, right_eye])
    mouth_points = lm[MOUTH]
    eyes = _padded_box("eyes", eye_points, pad, input_extent)
    mouth = _padded_box("mouth", mouth_points, pad, input_extent)

    left_eye_outer = left_eye[np.argmin(left_eye[:, 0])]
    right_eye_outer = right_eye[np.argmax(right_eye[:, 0])]
    mouth_left = mouth_points[np.argmin(mouth_points[:, 0])]
    mouth_right = mouth_points[np.argmax(mouth_points[:, 0])]
    cheek_left = _corner_box("cheek_left", left_eye_outer, mouth_left, input_extent)
    cheek_right = _corner_box("cheek_right", right_eye_outer, mouth_right, input_extent)
    return [eyes, mouth, cheek_left, cheek_right]


# Plausible frontal 49-point layout on a 224x224 face crop, used by the
# synthetic generator and as a test fixture.
_TEMPLATE_224 = np.array([
    # left brow (5)
    (45, 72), (57, 68), (70, 66), (83, 68), (95, 72),
    # right brow (5)
    (129, 72), (141, 68), (154, 66), (167, 68), (179, 72),
    # nose ridge (4)
    (112, 90), (112, 104), (112, 118), (112, 130),
    # nose base (5)
    (96, 140), (104, 143), (112, 145), (120, 143), (128, 140),
    # left eye (6)
    (55, 92), (65, 87), (77, 87), (85, 92), (77, 97), (65, 97),
    # right eye (6)
    (139, 92), (147, 87), (159, 87), (169, 92), (159, 97), (147, 97),
    # outer mouth (12)
    (78, 168), (88, 162), (100, 158), (112, 157), (124, 158), (136, 162),
    (146, 168), (136, 176), (124, 180), (112, 181), (100, 180), (88, 176),
    # inner mouth (6)
    (90, 168), (101, 165), (112, 164), (123, 165), (134, 168), (112, 171),
], dtype=np.float64)


def frontal_landmark_template(input_extent=(224, 224)) -> np.ndarray:
    """A deterministic frontal 49-landmark layout scaled to ``input_extent``."""
    width, height = input_extent
    scaled = _TEMPLATE_224 * np.array([width / 224.0, height / 224.0])
    return scaled


def region_for_sample(name: str, record, input_extent) -> Region:
    """Resolve a named region for one sample record.

    Manifest-provided boxes take precedence; otherwise the default
    construction runs on the record's 49 landmarks.
    """
    if record.regions is not None:
        for box in record.regions:
            if box.name == name:
                return Region.from_box(box.name, box.x0, box.y0, box.x1, box.y1)
    if name in DEFAULT_REGION_NAMES and record.landmarks is not None \
            and record.landmarks.shape == (LANDMARK_COUNT, 2):
        built = build_default_regions(record.landmarks, input_extent)
        return built[DEFAULT_REGION_NAMES.index(name)]
    raise MismatchError(
        f"sample {record.sample_id!r}: no region box or landmarks for region {name!r}"
    )
