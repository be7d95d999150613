"""Synthetic class-conditional Gaussian datasets for end-to-end runs.

Each class ``c`` owns a covariance ``S_c = Q_c diag(exp(sep * g_c)) Q_c^T
+ 0.05 I`` built from a class-specific rotation ``Q_c`` and log-spectrum
``g_c``; at separation 0 every class collapses to the same ``1.05 I`` and
the pipeline can do no better than chance. Subjects add a small rank-one
bump shared by their frames, so subject-independent splitting stays
meaningful. Observations per frame are zero-mean draws, which makes the
covariance descriptor the only class-bearing statistic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .regions import frontal_landmark_template
from .tensorio import (
    DatasetManifest,
    FeatureTensor,
    SampleRecord,
    save_dataset_manifest,
    save_feature_tensor,
)


def _class_covariances(rng: np.random.Generator, classes: int, dim: int,
                       separation: float) -> list[np.ndarray]:
    covariances = []
    for _ in range(classes):
        raw = rng.standard_normal((dim, dim))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.diag(r))
        log_spectrum = rng.standard_normal(dim)
        cov = (q * np.exp(separation * log_spectrum)) @ q.T
        cov = (cov + cov.T) / 2.0
        cov[np.diag_indices_from(cov)] += 0.05
        covariances.append(cov)
    return covariances


def generate_synthetic_dataset(
    out_dir,
    *,
    classes: int = 3,
    subjects: int = 10,
    videos_per_subject: int = 2,
    frames: int = 3,
    maps: int = 8,
    height: int = 7,
    width: int = 7,
    separation: float = 1.0,
    subject_scale: float = 0.2,
    seed: int = 0,
    input_extent: tuple[int, int] = (224, 224),
    with_landmarks: bool = True,
) -> Path:
    """Write tensors plus a manifest under ``out_dir``; returns the manifest path.

    Deterministic for a fixed seed: the generator stream is consumed in a
    fixed (class covariances, subject bumps, then per-frame draws) order.
    """
    for name, value in (("classes", classes), ("subjects", subjects),
                        ("videos_per_subject", videos_per_subject), ("frames", frames),
                        ("maps", maps), ("height", height), ("width", width)):
        if value < 1:
            raise ValueError(f"{name} must be at least 1, got {value}")
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    class_covs = _class_covariances(rng, classes, maps, separation)
    bumps = []
    for _ in range(subjects):
        direction = rng.standard_normal(maps)
        direction /= np.linalg.norm(direction)
        bumps.append(subject_scale * np.outer(direction, direction))

    cholesky = {}
    for c in range(classes):
        for s in range(subjects):
            cholesky[(c, s)] = np.linalg.cholesky(class_covs[c] + bumps[s])

    landmarks = frontal_landmark_template(input_extent) if with_landmarks else None
    n_pixels = height * width
    records = []
    for s in range(subjects):
        for c in range(classes):
            for v in range(videos_per_subject):
                video_id = f"s{s:02d}_c{c}_v{v}"
                for f in range(frames):
                    observations = cholesky[(c, s)] @ rng.standard_normal((maps, n_pixels))
                    tensor = FeatureTensor(
                        observations.reshape(maps, height, width).astype(np.float32)
                    )
                    sample_id = f"{video_id}_f{f}"
                    filename = f"{sample_id}.fmt1"
                    save_feature_tensor(tensor, tensor_dir / filename)
                    records.append(SampleRecord(
                        sample_id=sample_id,
                        tensor_path=tensor_dir / filename,
                        label=c,
                        subject_id=f"s{s:02d}",
                        video_id=video_id,
                        frame_index=f,
                        landmarks=landmarks,
                    ))

    manifest = DatasetManifest(
        class_names=tuple(f"class_{c}" for c in range(classes)),
        input_extent=input_extent,
        samples=tuple(records),
    )
    manifest_path = out_dir / "manifest.json"
    save_dataset_manifest(manifest, manifest_path)
    return manifest_path
