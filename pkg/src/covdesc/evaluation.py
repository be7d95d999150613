"""Subject-independent fold assignment and accuracy / confusion reporting.

Folds are dealt per subject (never per frame), so no subject's data can
appear on both sides of a split. Reports carry a confusion matrix with
rows indexed by the true class; overall accuracy is its trace over the
total count.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensorio import DatasetManifest


@dataclass(frozen=True)
class FoldAssignment:
    """Maps every subject to exactly one of ``k`` folds."""

    k: int
    fold_of: dict[str, int]
    seed: int

    def test_subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.fold_of.items() if f == fold)


def assign_subject_folds(subject_ids, k: int, seed: int) -> FoldAssignment:
    """Shuffle the distinct subjects with a seeded generator and deal them
    round-robin into ``k`` folds. Deterministic for a fixed seed and
    independent of the input ordering."""
    if k < 2:
        raise ValueError(f"fold count must be at least 2, got {k}")
    subjects = sorted(set(subject_ids))
    if len(subjects) < k:
        raise DataError(f"{len(subjects)} subjects cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    fold_of = {subjects[idx]: i % k for i, idx in enumerate(order)}
    return FoldAssignment(k, fold_of, seed)


def make_folds(manifest: DatasetManifest, k: int, seed: int) -> FoldAssignment:
    """Subject-independent fold assignment for a manifest's subjects."""
    return assign_subject_folds([s.subject_id for s in manifest.samples], k, seed)


def fold_indices(assignment: FoldAssignment, subject_ids) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-fold (train_indices, test_indices) into a sample-aligned sequence."""
    subject_ids = list(subject_ids)
    folds = np.array([assignment.fold_of[s] for s in subject_ids])
    splits = []
    for f in range(assignment.k):
        test = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f)
        splits.append((train, test))
    return splits


@dataclass(frozen=True)
class EvalReport:
    """Confusion matrix and derived accuracy figures at one granularity."""

    class_names: tuple[str, ...]
    confusion: np.ndarray
    unit: str

    def __post_init__(self):
        arr = np.asarray(self.confusion, dtype=np.int64)
        k = len(self.class_names)
        if arr.shape != (k, k):
            raise ValueError(f"confusion must be {k}x{k}, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "confusion", arr)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def overall_accuracy(self) -> float:
        """Percentage: 100 * trace / total."""
        if self.total == 0:
            return 0.0
        return 100.0 * float(np.trace(self.confusion)) / self.total

    @property
    def per_class_recall(self) -> np.ndarray:
        """Percentage of each true class recovered; NaN for absent classes."""
        row_sums = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * np.diag(self.confusion) / row_sums

    def to_dict(self) -> dict:
        recalls = self.per_class_recall
        return {
            "unit": self.unit,
            "class_names": list(self.class_names),
            "total": self.total,
            "overall_accuracy": self.overall_accuracy,
            "per_class_recall": [None if np.isnan(r) else float(r) for r in recalls],
            "confusion": self.confusion.tolist(),
        }

    def text_table(self) -> str:
        """Aligned plain-text summary with the confusion matrix."""
        names = list(self.class_names)
        width = max([len(n) for n in names] + [8])
        lines = [
            f"unit: {self.unit}    samples: {self.total}    "
            f"overall accuracy: {self.overall_accuracy:.2f}%",
            "",
        ]
        header = " " * (width + 2) + "  ".join(f"{n:>{width}}" for n in names)
        lines.append(header + f"  {'recall%':>8}")
        for i, name in enumerate(names):
            counts = "  ".join(f"{int(c):>{width}}" for c in self.confusion[i])
            recall = self.per_class_recall[i]
            recall_txt = "   -" if np.isnan(recall) else f"{recall:8.2f}"
            lines.append(f"{name:>{width}}  {counts}  {recall_txt}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        """Comma-delimited confusion matrix, truth in rows."""
        lines = ["truth\\predicted," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.confusion):
            lines.append(name + "," + ",".join(str(int(c)) for c in row))
        return "\n".join(lines) + "\n"

    def write(self, directory, stem: str = "report") -> list[Path]:
        """Emit JSON, text, and CSV renderings into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        json_path = directory / f"{stem}.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        paths.append(json_path)
        text_path = directory / f"{stem}.txt"
        text_path.write_text(self.text_table())
        paths.append(text_path)
        csv_path = directory / f"{stem}_confusion.csv"
        csv_path.write_text(self.confusion_csv())
        paths.append(csv_path)
        return paths


def _confusion_from_pairs(pairs, n_classes: int) -> np.ndarray:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for truth, predicted in pairs:
        if not 0 <= truth < n_classes or not 0 <= predicted < n_classes:
            raise DataError(f"class index out of range: truth={truth}, predicted={predicted}")
        confusion[truth, predicted] += 1
    return confusion


def evaluate_units(predictions: dict, truth: dict, class_names, unit: str) -> EvalReport:
    """Score one prediction per unit against its true class."""
    missing = [u for u in truth if u not in predictions]
    if missing:
        raise DataError(f"missing predictions for {len(missing)} unit(s), e.g. {missing[0]!r}")
    pairs = [(truth[u], predictions[u]) for u in truth]
    return EvalReport(tuple(class_names), _confusion_from_pairs(pairs, len(class_names)), unit)


def evaluate_video(predictions: dict, truth: dict, class_names) -> EvalReport:
    """Video-granularity report from one prediction per video id."""
    return evaluate_units(predictions, truth, class_names, "video")


def softmax_video_rule(frame_predictions: dict, truth: dict, class_names) -> EvalReport:
    """Strict all-frames video rule: a video counts as correct only when
    every one of its frames is predicted as the true class.

    ``frame_predictions`` maps ``(video_id, frame_index)`` to a class.
    For an incorrect video the confusion row charges the most common
    wrong frame label (ties to the lowest class index), keeping the
    matrix trace equal to the number of correct videos.
    """
    by_video: dict[str, list[int]] = {}
    for (video_id, _), predicted in frame_predictions.items():
        by_video.setdefault(video_id, []).append(predicted)
    missing = [v for v in truth if v not in by_video]
    if missing:
        raise DataError(f"missing frames for {len(missing)} video(s), e.g. {missing[0]!r}")
    pairs = []
    for video_id, true_class in truth.items():
        frames = by_video[video_id]
        if all(p == true_class for p in frames):
            pairs.append((true_class, true_class))
        else:
            wrong = Counter(p for p in frames if p != true_class)
            best = min(wrong.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            pairs.append((true_class, best))
    return EvalReport(tuple(class_names), _confusion_from_pairs(pairs, len(class_names)), "video")
