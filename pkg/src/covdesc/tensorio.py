"""Feature-tensor container I/O, bilinear map resizing, and dataset manifests.

Tensor files use a fixed little-endian layout (FMT1): four ASCII magic
bytes ``FMT1``, three uint32 dims ``m, h, w``, then ``m*h*w`` IEEE-754
float32 values in map-major, then row-major order. Values are kept in
float32 so that save/load round-trips bitwise; numerical work downstream
promotes to float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    ManifestError,
    NonFiniteValueError,
    TruncatedPayloadError,
)

_MAGIC = b"FMT1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FeatureTensor:
    """A stack of ``m`` feature maps of size ``h x w`` for one sample.

    ``data`` is a C-contiguous ``(m, h, w)`` float32 array; flattened it
    is exactly the FMT1 payload order.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise FormatError(
                f"feature tensor must be (m, h, w) with positive dims, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("feature tensor contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def maps(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def save_feature_tensor(tensor: FeatureTensor, path) -> None:
    """Write ``tensor`` to ``path`` in FMT1, replacing any existing file."""
    m, h, w = tensor.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m, h, w))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_feature_tensor(path) -> FeatureTensor:
    """Read an FMT1 file back into a :class:`FeatureTensor`.

    Raises
    ------
    FormatError
        Bad magic, a zero dimension, or trailing bytes after the payload.
    TruncatedPayloadError
        Fewer than ``m*h*w`` stored values.
    NonFiniteValueError
        Payload contains NaN or Inf.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: shorter than the FMT1 header")
    magic, m, h, w = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if min(m, h, w) == 0:
        raise FormatError(f"{path}: zero dimension in header ({m}, {h}, {w})")
    expected = _HEADER.size + 4 * m * h * w
    if len(raw) < expected:
        stored = (len(raw) - _HEADER.size) // 4
        raise TruncatedPayloadError(f"{path}: payload holds {stored} of {m * h * w} values")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f4", count=m * h * w, offset=_HEADER.size)
    if not np.isfinite(values).all():
        raise NonFiniteValueError(f"{path}: payload contains NaN or Inf")
    return FeatureTensor(values.reshape(m, h, w))


def _source_grid(n_in: int, n_out: int) -> np.ndarray:
    # Corner-aligned: first/last output samples sit on the first/last
    # input samples; a single output sample sits on index 0.
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_feature_maps(tensor: FeatureTensor, out_h: int, out_w: int) -> FeatureTensor:
    """Resize every map independently with corner-aligned bilinear sampling.

    Corner alignment pins output corners to input corners, so constant
    maps stay constant and a same-size resize reproduces the input
    exactly. Interpolation runs in float64; results are rounded back to
    float32 storage.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be at least 1x1, got {out_h}x{out_w}")
    _, h, w = tensor.data.shape
    src = tensor.data.astype(np.float64)

    ys = _source_grid(h, out_h)
    xs = _source_grid(w, out_w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]

    rows0 = src[:, y0, :]
    rows1 = src[:, y1, :]
    top = rows0[:, :, x0] * (1.0 - fx) + rows0[:, :, x1] * fx
    bottom = rows1[:, :, x0] * (1.0 - fx) + rows1[:, :, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return FeatureTensor(out.astype(np.float32))


@dataclass(frozen=True)
class RegionBox:
    """Axis-aligned pixel rectangle in input-image coordinates, corners inclusive."""

    name: str
    x0: int
    y0: int
    x1: int
    y1: int


@dataclass(frozen=True)
class SampleRecord:
    """One labeled frame: tensor location plus grouping and region metadata."""

    sample_id: str
    tensor_path: Path
    label: int
    subject_id: str
    video_id: str
    frame_index: int
    landmarks: np.ndarray | None = None
    regions: tuple[RegionBox, ...] | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered labeled sample collection with its class vocabulary."""

    class_names: tuple[str, ...]
    input_extent: tuple[int, int]
    samples: tuple[SampleRecord, ...] = field(default_factory=tuple)

    def subjects(self) -> list[str]:
        return sorted({s.subject_id for s in self.samples})

    def videos(self) -> dict[str, list[SampleRecord]]:
        """Group samples by video id, frames ordered by frame index."""
        groups: dict[str, list[SampleRecord]] = {}
        for s in self.samples:
            groups.setdefault(s.video_id, []).append(s)
        for frames in groups.values():
            frames.sort(key=lambda s: s.frame_index)
        return groups


def _check_point_in_extent(x: float, y: float, extent: tuple[int, int], where: str) -> None:
    width, height = extent
    if not (0 <= x < width and 0 <= y < height):
        raise ManifestError(f"{where}: point ({x}, {y}) outside extent {width}x{height}")


def _parse_sample(entry: dict, index: int, manifest_dir: Path,
                  n_classes: int, extent: tuple[int, int]) -> SampleRecord:
    where = f"samples[{index}]"
    if not isinstance(entry, dict):
        raise ManifestError(f"{where}: expected an object")
    required = ("sample_id", "tensor_path", "label", "subject_id", "video_id", "frame_index")
    for key in required:
        if key not in entry:
            raise ManifestError(f"{where}: missing key {key!r}")
    label = entry["label"]
    if not isinstance(label, int) or not 0 <= label < n_classes:
        raise ManifestError(f"{where}: unknown label {label!r} for {n_classes} classes")
    frame_index = entry["frame_index"]
    if not isinstance(frame_index, int):
        raise ManifestError(f"{where}: frame_index must be an integer")

    landmarks = None
    if entry.get("landmarks") is not None:
        pts = entry["landmarks"]
        try:
            landmarks = np.asarray(pts, dtype=np.float64).reshape(len(pts), 2)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: landmarks must be [[x, y], ...]") from exc
        for x, y in landmarks:
            _check_point_in_extent(x, y, extent, f"{where}.landmarks")

    regions = None
    if entry.get("regions") is not None:
        boxes = []
        for j, box in enumerate(entry["regions"]):
            bwhere = f"{where}.regions[{j}]"
            try:
                parsed = RegionBox(str(box["name"]), int(box["x0"]), int(box["y0"]),
                                   int(box["x1"]), int(box["y1"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{bwhere}: expected name/x0/y0/x1/y1") from exc
            if parsed.x1 < parsed.x0 or parsed.y1 < parsed.y0:
                raise ManifestError(f"{bwhere}: empty box")
            _check_point_in_extent(parsed.x0, parsed.y0, extent, bwhere)
            _check_point_in_extent(parsed.x1, parsed.y1, extent, bwhere)
            boxes.append(parsed)
        regions = tuple(boxes)

    tensor_path = Path(entry["tensor_path"])
    if not tensor_path.is_absolute():
        tensor_path = manifest_dir / tensor_path
    return SampleRecord(
        sample_id=str(entry["sample_id"]),
        tensor_path=tensor_path,
        label=label,
        subject_id=str(entry["subject_id"]),
        video_id=str(entry["video_id"]),
        frame_index=frame_index,
        landmarks=landmarks,
        regions=regions,
    )


def load_dataset_manifest(path) -> DatasetManifest:
    """Parse and validate a JSON manifest; referenced tensors are not opened."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    class_names = doc.get("class_names")
    if not isinstance(class_names, list) or not class_names \
            or not all(isinstance(c, str) for c in class_names):
        raise ManifestError(f"{path}: class_names must be a non-empty list of strings")
    extent_raw = doc.get("input_extent")
    if (not isinstance(extent_raw, list) or len(extent_raw) != 2
            or not all(isinstance(v, int) and v >= 1 for v in extent_raw)):
        raise ManifestError(f"{path}: input_extent must be [width, height]")
    extent = (extent_raw[0], extent_raw[1])
    entries = doc.get("samples")
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: samples must be a list")

    samples = []
    seen: set[tuple[str, int]] = set()
    for i, entry in enumerate(entries):
        record = _parse_sample(entry, i, path.parent, len(class_names), extent)
        key = (record.video_id, record.frame_index)
        if key in seen:
            raise ManifestError(f"{path}: duplicate (video_id, frame_index) {key}")
        seen.add(key)
        samples.append(record)
    return DatasetManifest(tuple(class_names), extent, tuple(samples))


def save_dataset_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest as JSON; tensor paths inside the manifest directory
    are stored relative so the dataset stays relocatable."""
    path = Path(path)
    base = path.parent.resolve()

    def encode_path(p: Path) -> str:
        try:
            return p.resolve().relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "class_names": list(manifest.class_names),
        "input_extent": list(manifest.input_extent),
        "samples": [],
    }
    for s in manifest.samples:
        entry: dict = {
            "sample_id": s.sample_id,
            "tensor_path": encode_path(s.tensor_path),
            "label": s.label,
            "subject_id": s.subject_id,
            "video_id": s.video_id,
            "frame_index": s.frame_index,
        }
        if s.landmarks is not None:
            entry["landmarks"] = [[float(x), float(y)] for x, y in s.landmarks]
        if s.regions is not None:
            entry["regions"] = [
                {"name": b.name, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
                for b in s.regions
            ]
        doc["samples"].append(entry)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def descriptor_to_tensor(matrix: np.ndarray) -> FeatureTensor:
    """Pack a square matrix into the FMT1 container shape ``(dim, dim, 1)``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise FormatError(f"expected a square matrix, got shape {matrix.shape}")
    return FeatureTensor(matrix[:, :, None].astype(np.float32))


def tensor_to_descriptor(tensor: FeatureTensor) -> np.ndarray:
    """Inverse of :func:`descriptor_to_tensor`; returns a float64 square matrix."""
    if tensor.width != 1 or tensor.maps != tensor.height:
        raise FormatError(
            f"container dims ({tensor.maps}, {tensor.height}, {tensor.width}) "
            "do not hold a square descriptor"
        )
    return tensor.data[:, :, 0].astype(np.float64)
