"""On-disk store of matrix-log descriptors, one FMT1 file per (sample, region).

The store keeps what every downstream computation consumes: the matrix
logarithm of each regularized covariance descriptor. ``index.json``
records provenance (epsilon, ratio, resize target) and the file map.
Values pass through float32 container storage; symmetric structure is
preserved exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import FormatError, MismatchError
from .kernel import LogDescriptor
from .tensorio import descriptor_to_tensor, load_feature_tensor, save_feature_tensor, tensor_to_descriptor

_INDEX_FORMAT = "covdesc-store-v1"


class DescriptorStore:
    """Directory of persisted log descriptors plus an index."""

    def __init__(self, root: Path, meta: dict, entries: dict[str, dict[str, str]]):
        self.root = Path(root)
        self.meta = meta
        self._entries = entries  # sample_id -> {region -> filename}

    @classmethod
    def create(cls, root, *, epsilon: float, ratio: float,
               resize: tuple[int, int], regions) -> "DescriptorStore":
        root = Path(root)
        (root / "logs").mkdir(parents=True, exist_ok=True)
        meta = {
            "format": _INDEX_FORMAT,
            "epsilon": float(epsilon),
            "ratio": float(ratio),
            "resize": [int(resize[0]), int(resize[1])],
            "regions": list(regions),
        }
        store = cls(root, meta, {})
        store.save_index()
        return store

    @classmethod
    def open(cls, root) -> "DescriptorStore":
        root = Path(root)
        index_path = root / "index.json"
        try:
            doc = json.loads(index_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"{index_path}: unreadable store index ({exc})") from exc
        if doc.get("format") != _INDEX_FORMAT:
            raise FormatError(f"{index_path}: not a {_INDEX_FORMAT} index")
        entries = {str(s): {str(r): str(f) for r, f in by_region.items()}
                   for s, by_region in doc.get("samples", {}).items()}
        meta = {k: v for k, v in doc.items() if k != "samples"}
        return cls(root, meta, entries)

    @property
    def epsilon(self) -> float:
        return float(self.meta["epsilon"])

    @property
    def regions(self) -> list[str]:
        return list(self.meta["regions"])

    def sample_ids(self) -> list[str]:
        return list(self._entries)

    def has(self, sample_id: str, region: str) -> bool:
        return region in self._entries.get(sample_id, {})

    def add(self, descriptor: LogDescriptor) -> Path:
        """Persist one descriptor; re-adding overwrites its file."""
        by_region = self._entries.setdefault(descriptor.sample_id, {})
        filename = by_region.get(descriptor.region)
        if filename is None:
            ordinal = len(self._entries) - 1
            filename = f"d{ordinal:06d}_{descriptor.region}.fmt1"
            by_region[descriptor.region] = filename
        path = self.root / "logs" / filename
        save_feature_tensor(descriptor_to_tensor(descriptor.logc), path)
        return path

    def save_index(self) -> None:
        doc = dict(self.meta)
        doc["samples"] = self._entries
        (self.root / "index.json").write_text(json.dumps(doc, indent=2) + "\n")

    def load(self, sample_id: str, region: str) -> LogDescriptor:
        by_region = self._entries.get(sample_id)
        if not by_region or region not in by_region:
            raise MismatchError(f"store has no descriptor for ({sample_id!r}, {region!r})")
        tensor = load_feature_tensor(self.root / "logs" / by_region[region])
        return LogDescriptor(sample_id, region, tensor_to_descriptor(tensor))

    def load_region(self, region: str, sample_ids=None) -> list[LogDescriptor]:
        """Descriptors of one region, in the given (or insertion) order."""
        if sample_ids is None:
            sample_ids = [s for s, by_region in self._entries.items() if region in by_region]
        return [self.load(s, region) for s in sample_ids]

    def stored_regions(self) -> list[str]:
        found: set[str] = set()
        for by_region in self._entries.values():
            found.update(by_region)
        return sorted(found)

