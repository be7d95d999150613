"""Late fusion of per-region class scores by weighted sum or product.

Fused scores are renormalized to sum to one, so scaling every weight by
the same positive constant leaves the result literally unchanged. The
shipped presets reproduce the reference weight configurations: ``oulu``
(mouth 0.2, all others 1) and ``sfew`` (global 1, all others 0.1).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MismatchError

WEIGHTED_SUM = "weighted_sum"
PRODUCT = "product"

_PRODUCT_FLOOR = 1e-12

_PRESETS = {
    "oulu": {"global": 1.0, "eyes": 1.0, "cheek_left": 1.0, "cheek_right": 1.0, "mouth": 0.2},
    "sfew": {"global": 1.0, "eyes": 0.1, "mouth": 0.1, "cheek_left": 0.1, "cheek_right": 0.1},
}


@dataclass(frozen=True)
class FusionConfig:
    """Fusion method plus per-region weights (weighted sum only)."""

    method: str
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in (WEIGHTED_SUM, PRODUCT):
            raise ValueError(f"unknown fusion method {self.method!r}")
        weights = {str(k): float(v) for k, v in self.weights.items()}
        if self.method == WEIGHTED_SUM:
            if not weights:
                raise ValueError("weighted_sum fusion needs at least one weight")
            if any(w < 0 for w in weights.values()):
                raise ValueError("fusion weights must be nonnegative")
            if not any(w > 0 for w in weights.values()):
                raise ValueError("weighted_sum fusion needs a strictly positive weight")
        object.__setattr__(self, "weights", weights)


def preset_config(name: str, method: str = WEIGHTED_SUM) -> FusionConfig:
    """The reference weight configuration for a known dataset preset."""
    if name not in _PRESETS:
        raise ValueError(f"unknown fusion preset {name!r}; known: {sorted(_PRESETS)}")
    return FusionConfig(method, dict(_PRESETS[name]))


def equal_weights_config(regions, method: str = WEIGHTED_SUM) -> FusionConfig:
    """Weight 1 for every given region."""
    return FusionConfig(method, {r: 1.0 for r in regions})


def fuse(scores: dict[str, np.ndarray], config: FusionConfig) -> tuple[np.ndarray, int]:
    """Combine per-region class scores into one normalized score vector.

    Returns ``(fused_scores, predicted_class_index)`` with argmax ties
    broken at the lowest index. Product fusion floors entries at 1e-12 so
    a single zero cannot veto a class outright; a zero (or negative)
    entry triggers a degenerate-product warning.
    """
    if not scores:
        raise ValueError("no region scores to fuse")
    arrays = {r: np.asarray(s, dtype=np.float64) for r, s in scores.items()}
    k = None
    for region, arr in arrays.items():
        if arr.ndim != 1:
            raise MismatchError(f"region {region!r}: scores must be a vector")
        if k is None:
            k = arr.shape[0]
        elif arr.shape[0] != k:
            raise MismatchError(f"region {region!r}: {arr.shape[0]} classes, expected {k}")

    if config.method == WEIGHTED_SUM:
        unknown = set(config.weights) - set(arrays)
        if unknown:
            raise MismatchError(f"weights reference absent regions: {sorted(unknown)}")
        fused = np.zeros(k)
        for region, weight in config.weights.items():
            fused += weight * arrays[region]
    else:
        fused = np.ones(k)
        for region in sorted(arrays):
            arr = arrays[region]
            if (arr <= 0).any():
                warnings.warn(
                    f"region {region!r}: nonpositive score in product fusion; "
                    f"flooring at {_PRODUCT_FLOOR:g}",
                    RuntimeWarning,
                    stacklevel=2,
                )
            fused *= np.maximum(arr, _PRODUCT_FLOOR)

    total = fused.sum()
    if total <= 0 or not np.isfinite(total):
        raise MismatchError("fused scores do not normalize; check inputs")
    fused /= total
    return fused, int(fused.argmax())


def save_fusion_config(config: FusionConfig, path) -> None:
    Path(path).write_text(
        json.dumps({"method": config.method, "weights": config.weights}, indent=2) + "\n"
    )


def load_fusion_config(path) -> FusionConfig:
    try:
        doc = json.loads(Path(path).read_text())
        return FusionConfig(str(doc["method"]), dict(doc.get("weights", {})))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed fusion config ({exc})") from exc
