"""Command-line pipeline driver.

Subcommands: ``synth`` (synthetic dataset), ``extract`` (descriptor
store), ``gram`` (kernel cache), ``train`` (grid search + model bundle),
``predict`` (fused per-unit scores), ``evaluate`` (reports and figures).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .covariance import compute_covariance, regularize, tensor_to_observations
from .errors import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    CovdescError,
    DataError,
    FormatError,
    MismatchError,
    NumericalError,
)
from .evaluation import evaluate_units, softmax_video_rule
from .fusion import (
    PRODUCT,
    WEIGHTED_SUM,
    FusionConfig,
    equal_weights_config,
    fuse,
    load_fusion_config,
    preset_config,
    save_fusion_config,
)
from .kernel import (
    GLOBAL_REGION,
    LogDescriptor,
    gram_matrix,
    pairwise_squared_distances,
    save_gram,
    video_kernel_row,
)
from .regions import map_region, region_for_sample
from .reporting import render_confusion_matrix, render_cv_table
from .store import DescriptorStore
from .svm import (
    COST_GRID,
    GAMMA_GRID,
    SvmModel,
    cv_table_csv,
    grid_search,
    load_model,
    predict_scores_batch,
    save_model,
    train_multiclass,
)
from .synth import generate_synthetic_dataset
from .tensorio import DatasetManifest, load_dataset_manifest, load_feature_tensor, resize_feature_maps

log = logging.getLogger("covdesc")

_TINY = float(np.finfo(np.float64).tiny)
_BUNDLE_FORMAT = "covdesc-bundle-v1"
_PREDICTIONS_FORMAT = "covdesc-predictions-v1"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _UsageError(message)


@dataclass
class PipelineConfig:
    """Shared pipeline parameters, overridable per flag or config file."""

    regions: tuple[str, ...] | None = None
    epsilon: float = 1e-4
    ratio: float = 1.0 / 16.0
    resize: tuple[int, int] = (14, 14)
    gamma_grid: tuple[float, ...] = GAMMA_GRID
    cost_grid: tuple[float, ...] = COST_GRID
    folds: int = 5
    seed: int = 0
    fusion: str = "equal"

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.ratio <= 0:
            raise ValueError(f"ratio must be positive, got {self.ratio}")
        if self.resize[0] < 1 or self.resize[1] < 1:
            raise ValueError(f"resize target must be at least 1x1, got {self.resize}")
        if self.folds < 2:
            raise ValueError(f"folds must be at least 2, got {self.folds}")
        if not self.gamma_grid or not self.cost_grid:
            raise ValueError("gamma and cost grids must be non-empty")


def _parse_ratio(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_resize(text: str) -> tuple[int, int]:
    if "x" in text:
        h, w = text.lower().split("x", 1)
        return int(h), int(w)
    side = int(text)
    return side, side


def _parse_grid(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_regions(text: str) -> tuple[str, ...]:
    names = tuple(r.strip() for r in text.split(",") if r.strip())
    if not names:
        raise ValueError("empty region list")
    return names


def _load_pipeline_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be an object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise FormatError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = PipelineConfig()
    if "regions" in doc:
        cfg.regions = tuple(str(r) for r in doc["regions"])
    if "epsilon" in doc:
        cfg.epsilon = float(doc["epsilon"])
    if "ratio" in doc:
        cfg.ratio = _parse_ratio(str(doc["ratio"]))
    if "resize" in doc:
        cfg.resize = (int(doc["resize"][0]), int(doc["resize"][1]))
    if "gamma_grid" in doc:
        cfg.gamma_grid = tuple(float(g) for g in doc["gamma_grid"])
    if "cost_grid" in doc:
        cfg.cost_grid = tuple(float(c) for c in doc["cost_grid"])
    if "folds" in doc:
        cfg.folds = int(doc["folds"])
    if "seed" in doc:
        cfg.seed = int(doc["seed"])
    if "fusion" in doc:
        cfg.fusion = str(doc["fusion"])
    return cfg


def _merge_config(args) -> PipelineConfig:
    cfg = _load_pipeline_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "regions", None) is not None:
        cfg.regions = args.regions
    if getattr(args, "epsilon", None) is not None:
        cfg.epsilon = args.epsilon
    if getattr(args, "ratio", None) is not None:
        cfg.ratio = args.ratio
    if getattr(args, "resize", None) is not None:
        cfg.resize = args.resize
    if getattr(args, "gamma_grid", None) is not None:
        cfg.gamma_grid = args.gamma_grid
    if getattr(args, "cost_grid", None) is not None:
        cfg.cost_grid = args.cost_grid
    if getattr(args, "folds", None) is not None:
        cfg.folds = args.folds
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "fusion", None) is not None:
        cfg.fusion = args.fusion
    cfg.validate()
    return cfg


def _resolve_fusion(spec: str, regions) -> FusionConfig:
    if spec == "equal":
        return equal_weights_config(regions, WEIGHTED_SUM)
    if spec == "product":
        return FusionConfig(PRODUCT)
    if spec in ("oulu", "sfew"):
        return preset_config(spec, WEIGHTED_SUM)
    return load_fusion_config(spec)


def cmd_synth(args) -> int:
    manifest_path = generate_synthetic_dataset(
        args.out,
        classes=args.classes,
        subjects=args.subjects,
        videos_per_subject=args.videos_per_subject,
        frames=args.frames,
        maps=args.maps,
        height=args.height,
        width=args.width,
        separation=args.separation,
        subject_scale=args.subject_scale,
        seed=args.seed if args.seed is not None else 0,
        with_landmarks=not args.no_landmarks,
    )
    print(manifest_path)
    return EXIT_OK


def _extract_sample(record, manifest: DatasetManifest, cfg: PipelineConfig,
                    regions) -> list[LogDescriptor]:
    tensor = load_feature_tensor(record.tensor_path)
    resized = resize_feature_maps(tensor, cfg.resize[0], cfg.resize[1])
    map_dims = (resized.width, resized.height)
    descriptors = []
    for name in regions:
        if name == GLOBAL_REGION:
            obs = tensor_to_observations(resized)
        else:
            region = region_for_sample(name, record, manifest.input_extent)
            mapped = map_region(region, cfg.ratio, map_dims)
            obs = tensor_to_observations(resized, mapped)
        spd_descriptor = regularize(compute_covariance(obs), cfg.epsilon)
        descriptors.append(LogDescriptor.from_spd(record.sample_id, name, spd_descriptor))
    return descriptors


def cmd_extract(args) -> int:
    cfg = _merge_config(args)
    regions = cfg.regions or (GLOBAL_REGION,)
    manifest = load_dataset_manifest(args.manifest)
    store = DescriptorStore.create(
        args.store, epsilon=cfg.epsilon, ratio=cfg.ratio, resize=cfg.resize, regions=regions
    )
    failures = 0
    for record in manifest.samples:
        try:
            descriptors = _extract_sample(record, manifest, cfg, regions)
        except (CovdescError, OSError) as exc:
            failures += 1
            log.warning("skipping sample %s: %s", record.sample_id, exc)
            continue
        for descriptor in descriptors:
            store.add(descriptor)
    store.save_index()
    extracted = len(store.sample_ids())
    print(f"extracted {extracted} samples x {len(regions)} region(s) -> {store.root}"
          + (f" ({failures} skipped)" if failures else ""))
    if failures and args.strict:
        log.error("%d sample(s) failed under --strict", failures)
        return EXIT_DATA
    return EXIT_OK


def cmd_gram(args) -> int:
    store = DescriptorStore.open(args.store)
    descriptors = store.load_region(args.region)
    if not descriptors:
        raise DataError(f"store has no descriptors for region {args.region!r}")
    if args.gamma <= 0:
        raise ValueError(f"gamma must be positive, got {args.gamma}")
    gram = gram_matrix(descriptors, gamma=args.gamma)
    save_gram(gram, args.out)
    print(f"{args.out}: {len(gram.rows)}x{len(gram.cols)} Gram "
          f"(region={gram.region}, gamma={gram.gamma:g})")
    return EXIT_OK


def _aligned_training_data(manifest: DatasetManifest, store: DescriptorStore, regions):
    kept = []
    dropped = 0
    for record in manifest.samples:
        if all(store.has(record.sample_id, r) for r in regions):
            kept.append(record)
        else:
            dropped += 1
    if dropped:
        log.warning("dropping %d manifest sample(s) absent from the store", dropped)
    if not kept:
        raise DataError("no manifest samples found in the descriptor store")
    return kept


def cmd_train(args) -> int:
    cfg = _merge_config(args)
    manifest = load_dataset_manifest(args.manifest)
    store = DescriptorStore.open(args.store)
    regions = cfg.regions or tuple(store.regions)
    records = _aligned_training_data(manifest, store, regions)
    ids = [r.sample_id for r in records]
    labels = np.array([r.label for r in records])
    subjects = [r.subject_id for r in records]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fusion_config = _resolve_fusion(cfg.fusion, regions)
    best_cells = {}
    for region in regions:
        descriptors = store.load_region(region, ids)
        result = grid_search(descriptors, labels, subjects,
                             cfg.gamma_grid, cfg.cost_grid, cfg.folds, cfg.seed)
        gram = gram_matrix(descriptors, gamma=result.best_gamma)
        model = train_multiclass(gram, labels, result.best_cost)
        save_model(model, out_dir / f"model_{region}.json")
        (out_dir / f"cv_{region}.csv").write_text(cv_table_csv(result))
        render_cv_table(result, out_dir / f"cv_{region}.png",
                        title=f"{region}: cross-validated accuracy")
        best_cells[region] = {
            "gamma": result.best_gamma,
            "cost": result.best_cost,
            "cv_accuracy": result.best_accuracy(),
        }
        print(f"{region}: gamma={result.best_gamma:g} cost={result.best_cost:g} "
              f"cv={100 * result.best_accuracy():.2f}%")
    save_fusion_config(fusion_config, out_dir / "fusion.json")
    meta = {
        "format": _BUNDLE_FORMAT,
        "class_names": list(manifest.class_names),
        "regions": list(regions),
        "store": str(Path(args.store).resolve()),
        "folds": cfg.folds,
        "seed": cfg.seed,
        "gamma_grid": list(cfg.gamma_grid),
        "cost_grid": list(cfg.cost_grid),
        "best": best_cells,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return EXIT_OK


def _load_bundle(path) -> tuple[dict, dict[str, SvmModel], FusionConfig]:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable bundle meta ({exc})") from exc
    if meta.get("format") != _BUNDLE_FORMAT:
        raise FormatError(f"{path}: not a {_BUNDLE_FORMAT} bundle")
    models = {}
    for region in meta["regions"]:
        models[region] = load_model(path / f"model_{region}.json")
    fusion_config = load_fusion_config(path / "fusion.json")
    return meta, models, fusion_config


def _training_descriptors(store: DescriptorStore, meta: dict,
                          model: SvmModel) -> list[LogDescriptor]:
    wanted = list(model.training_ids)
    if all(store.has(s, model.region) for s in wanted):
        return store.load_region(model.region, wanted)
    train_store = DescriptorStore.open(meta["store"])
    return train_store.load_region(model.region, wanted)


def cmd_predict(args) -> int:
    meta, models, fusion_config = _load_bundle(args.bundle)
    manifest = load_dataset_manifest(args.manifest)
    store = DescriptorStore.open(args.store)
    bundle_regions = list(models)
    missing = [r for r in bundle_regions if r not in store.stored_regions()]
    if missing:
        raise DataError(f"store lacks region(s) {missing} required by the bundle")
    extra = [r for r in store.stored_regions() if r not in bundle_regions]
    if extra:
        log.warning("store regions %s not in the bundle; using %s only",
                    extra, bundle_regions)

    class_lists = {tuple(m.classes) for m in models.values()}
    if len(class_lists) != 1:
        raise MismatchError("bundle models disagree on their class lists")
    classes = list(class_lists.pop())

    if args.unit == "frame":
        unit_ids = [s.sample_id for s in manifest.samples]
        truths = [s.label for s in manifest.samples]
        extras = [{"video_id": s.video_id, "frame_index": s.frame_index}
                  for s in manifest.samples]
    else:
        groups = manifest.videos()
        unit_ids = sorted(groups)
        truths = []
        extras = [{} for _ in unit_ids]
        for vid in unit_ids:
            labels = {f.label for f in groups[vid]}
            if len(labels) != 1:
                raise DataError(f"video {vid!r} mixes labels {sorted(labels)}")
            truths.append(labels.pop())

    score_blocks = {}
    for region, model in models.items():
        train_descriptors = _training_descriptors(store, meta, model)
        if args.unit == "frame":
            test_descriptors = store.load_region(region, unit_ids)
            d2 = pairwise_squared_distances(test_descriptors, train_descriptors)
            block = np.maximum(np.exp(-model.gamma * d2), _TINY)
        else:
            rows = []
            for vid in unit_ids:
                frames = store.load_region(region, [f.sample_id for f in groups[vid]])
                rows.append(video_kernel_row(frames, train_descriptors, model.gamma))
            block = np.vstack(rows)
        score_blocks[region] = predict_scores_batch(model, block)

    predictions = []
    for i, unit_id in enumerate(unit_ids):
        per_region = {region: score_blocks[region][i] for region in models}
        fused, best_idx = fuse(per_region, fusion_config)
        entry = {
            "id": unit_id,
            "true_label": truths[i],
            "predicted": classes[best_idx],
            "scores": [float(v) for v in fused],
        }
        entry.update(extras[i])
        predictions.append(entry)

    doc = {
        "format": _PREDICTIONS_FORMAT,
        "unit": args.unit,
        "class_names": list(manifest.class_names),
        "classes": classes,
        "predictions": predictions,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    correct = sum(1 for p in predictions if p["predicted"] == p["true_label"])
    print(f"{out}: {len(predictions)} {args.unit} prediction(s), "
          f"{100.0 * correct / len(predictions):.2f}% correct")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        doc = json.loads(Path(args.predictions).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.predictions}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != _PREDICTIONS_FORMAT:
        raise FormatError(f"{args.predictions}: not a {_PREDICTIONS_FORMAT} file")
    manifest = load_dataset_manifest(args.manifest)
    source_unit = doc.get("unit")
    unit = args.unit or source_unit
    entries = doc.get("predictions", [])

    if source_unit == "frame" and unit == "video":
        frame_predictions = {}
        for e in entries:
            frame_predictions[(e["video_id"], e["frame_index"])] = int(e["predicted"])
        truth = {}
        for vid, frames in manifest.videos().items():
            labels = {f.label for f in frames}
            if len(labels) != 1:
                raise DataError(f"video {vid!r} mixes labels {sorted(labels)}")
            truth[vid] = labels.pop()
        report = softmax_video_rule(frame_predictions, truth, manifest.class_names)
    elif source_unit == unit:
        predicted = {e["id"]: int(e["predicted"]) for e in entries}
        if unit == "frame":
            truth = {s.sample_id: s.label for s in manifest.samples}
        else:
            truth = {}
            for vid, frames in manifest.videos().items():
                labels = {f.label for f in frames}
                if len(labels) != 1:
                    raise DataError(f"video {vid!r} mixes labels {sorted(labels)}")
                truth[vid] = labels.pop()
        report = evaluate_units(predicted, truth, manifest.class_names, unit)
    else:
        raise ValueError(f"cannot report {unit}-level results from {source_unit}-level predictions")

    out_dir = Path(args.out)
    paths = report.write(out_dir)
    figure = render_confusion_matrix(report, out_dir / "report_confusion.png")
    paths.append(figure)
    print(report.text_table())
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="covdesc", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--videos-per-subject", type=int, default=2)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--maps", type=int, default=8)
    p.add_argument("--height", type=int, default=7)
    p.add_argument("--width", type=int, default=7)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--subject-scale", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-landmarks", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute and store log descriptors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--config")
    p.add_argument("--regions", type=_parse_regions)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--ratio", type=_parse_ratio)
    p.add_argument("--resize", type=_parse_resize)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gram", help="persist a kernel Gram cache")
    p.add_argument("--store", required=True)
    p.add_argument("--region", default=GLOBAL_REGION)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("train", help="grid search and train a model bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--regions", type=_parse_regions)
    p.add_argument("--gamma-grid", type=_parse_grid)
    p.add_argument("--cost-grid", type=_parse_grid)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fusion")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="fused per-unit predictions")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--unit", choices=("frame", "video"), default="frame")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy report, confusion CSV and figure")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--unit", choices=("frame", "video"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"covdesc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except ValueError as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
