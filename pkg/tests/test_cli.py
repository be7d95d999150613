"""End-to-end CLI pipeline: synth -> extract -> train -> predict -> evaluate."""

import json

import numpy as np
import pytest

from covdesc.cli import main
from covdesc.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE
from covdesc.store import DescriptorStore
from covdesc.tensorio import load_dataset_manifest


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A small trained pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    store = root / "store"
    bundle = root / "bundle"
    assert main([
        "synth", "--out", str(data), "--classes", "3", "--subjects", "6",
        "--videos-per-subject", "1", "--frames", "2", "--maps", "4",
        "--height", "5", "--width", "5", "--separation", "1.5", "--seed", "5",
    ]) == EXIT_OK
    manifest = data / "manifest.json"
    assert main([
        "extract", "--manifest", str(manifest), "--store", str(store),
        "--epsilon", "0.0001", "--resize", "5x5",
    ]) == EXIT_OK
    assert main([
        "train", "--manifest", str(manifest), "--store", str(store),
        "--out", str(bundle), "--gamma-grid", "1e-3,1e-4",
        "--cost-grid", "1e3,1e5", "--folds", "3", "--seed", "0",
    ]) == EXIT_OK
    return {"root": root, "manifest": manifest, "store": store, "bundle": bundle}


class TestSynthCommand:
    def test_counts(self, tmp_path):
        out = tmp_path / "data"
        assert main([
            "synth", "--out", str(out), "--classes", "2", "--subjects", "3",
            "--videos-per-subject", "2", "--frames", "3", "--maps", "4",
            "--height", "5", "--width", "5",
        ]) == EXIT_OK
        manifest = load_dataset_manifest(out / "manifest.json")
        assert len(manifest.samples) == 2 * 3 * 2 * 3
        assert len(list((out / "tensors").glob("*.fmt1"))) == 36


class TestExtractCommand:
    def test_regions_give_five_descriptors(self, tmp_path):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--classes", "2", "--subjects", "2",
              "--videos-per-subject", "1", "--frames", "1", "--maps", "4",
              "--height", "7", "--width", "7"])
        store_dir = tmp_path / "store"
        assert main([
            "extract", "--manifest", str(data / "manifest.json"),
            "--store", str(store_dir),
            "--regions", "global,eyes,mouth,cheek_left,cheek_right",
            "--resize", "14x14", "--ratio", "1/16",
        ]) == EXIT_OK
        store = DescriptorStore.open(store_dir)
        assert store.stored_regions() == sorted(
            ["global", "eyes", "mouth", "cheek_left", "cheek_right"]
        )
        for sample_id in store.sample_ids():
            descriptor = store.load(sample_id, "eyes")
            assert descriptor.dim == 4

    def test_missing_landmarks_skipped_with_warning(self, tmp_path, caplog):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--classes", "2", "--subjects", "2",
              "--videos-per-subject", "1", "--frames", "1", "--maps", "4",
              "--height", "7", "--width", "7", "--no-landmarks"])
        store_dir = tmp_path / "store"
        code = main([
            "extract", "--manifest", str(data / "manifest.json"),
            "--store", str(store_dir), "--regions", "global,eyes",
        ])
        assert code == EXIT_OK
        store = DescriptorStore.open(store_dir)
        assert store.sample_ids() == []

    def test_strict_escalates(self, tmp_path):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--classes", "2", "--subjects", "2",
              "--videos-per-subject", "1", "--frames", "1", "--maps", "4",
              "--height", "7", "--width", "7", "--no-landmarks"])
        code = main([
            "extract", "--manifest", str(data / "manifest.json"),
            "--store", str(tmp_path / "store"), "--regions", "global,eyes", "--strict",
        ])
        assert code == EXIT_DATA

    def test_bad_epsilon_is_usage_error(self, tmp_path):
        code = main([
            "extract", "--manifest", "nope.json", "--store", str(tmp_path / "s"),
            "--epsilon", "-1",
        ])
        assert code == EXIT_USAGE


class TestGramCommand:
    def test_writes_cache(self, pipeline, tmp_path):
        out = tmp_path / "gram.fmt1"
        assert main([
            "gram", "--store", str(pipeline["store"]), "--region", "global",
            "--gamma", "1e-3", "--out", str(out),
        ]) == EXIT_OK
        assert out.exists()
        sidecar = json.loads((tmp_path / "gram.fmt1.json").read_text())
        assert sidecar["gamma"] == 1e-3
        assert len(sidecar["rows"]) == 36


class TestTrainCommand:
    def test_bundle_contents(self, pipeline):
        bundle = pipeline["bundle"]
        assert (bundle / "model_global.json").exists()
        assert (bundle / "cv_global.csv").exists()
        assert (bundle / "cv_global.png").exists()
        assert (bundle / "fusion.json").exists()
        meta = json.loads((bundle / "meta.json").read_text())
        assert meta["regions"] == ["global"]
        assert meta["best"]["global"]["cv_accuracy"] >= 0.9

    def test_missing_manifest_is_data_error(self, tmp_path):
        code = main([
            "train", "--manifest", str(tmp_path / "none.json"),
            "--store", str(tmp_path / "none"), "--out", str(tmp_path / "b"),
        ])
        assert code == EXIT_DATA


class TestPredictEvaluate:
    def test_frame_predictions(self, pipeline, tmp_path):
        out = tmp_path / "pred.json"
        assert main([
            "predict", "--bundle", str(pipeline["bundle"]),
            "--manifest", str(pipeline["manifest"]),
            "--store", str(pipeline["store"]), "--unit", "frame",
            "--out", str(out),
        ]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["unit"] == "frame"
        assert len(doc["predictions"]) == 36
        for entry in doc["predictions"]:
            assert abs(sum(entry["scores"]) - 1.0) <= 1e-9
            assert "video_id" in entry and "frame_index" in entry

    def test_video_predictions(self, pipeline, tmp_path):
        out = tmp_path / "pred_video.json"
        assert main([
            "predict", "--bundle", str(pipeline["bundle"]),
            "--manifest", str(pipeline["manifest"]),
            "--store", str(pipeline["store"]), "--unit", "video",
            "--out", str(out),
        ]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["unit"] == "video"
        assert len(doc["predictions"]) == 18  # 3 classes x 6 subjects x 1 video

    def test_memorization_bound(self, pipeline, tmp_path):
        # training-set accuracy must not fall below the CV estimate
        out = tmp_path / "pred.json"
        main([
            "predict", "--bundle", str(pipeline["bundle"]),
            "--manifest", str(pipeline["manifest"]),
            "--store", str(pipeline["store"]), "--unit", "frame",
            "--out", str(out),
        ])
        doc = json.loads(out.read_text())
        correct = sum(1 for e in doc["predictions"] if e["predicted"] == e["true_label"])
        train_accuracy = correct / len(doc["predictions"])
        meta = json.loads((pipeline["bundle"] / "meta.json").read_text())
        assert train_accuracy >= meta["best"]["global"]["cv_accuracy"] - 1e-12

    def test_evaluate_frame_report(self, pipeline, tmp_path):
        pred = tmp_path / "pred.json"
        main([
            "predict", "--bundle", str(pipeline["bundle"]),
            "--manifest", str(pipeline["manifest"]),
            "--store", str(pipeline["store"]), "--unit", "frame", "--out", str(pred),
        ])
        out_dir = tmp_path / "report"
        assert main([
            "evaluate", "--predictions", str(pred),
            "--manifest", str(pipeline["manifest"]), "--out", str(out_dir),
        ]) == EXIT_OK
        for name in ("report.json", "report.txt", "report_confusion.csv",
                     "report_confusion.png"):
            assert (out_dir / name).exists(), name
        doc = json.loads((out_dir / "report.json").read_text())
        assert doc["unit"] == "frame"
        assert doc["total"] == 36

    def test_evaluate_strict_video_rule(self, pipeline, tmp_path):
        pred = tmp_path / "pred.json"
        main([
            "predict", "--bundle", str(pipeline["bundle"]),
            "--manifest", str(pipeline["manifest"]),
            "--store", str(pipeline["store"]), "--unit", "frame", "--out", str(pred),
        ])
        out_dir = tmp_path / "report_video"
        assert main([
            "evaluate", "--predictions", str(pred),
            "--manifest", str(pipeline["manifest"]),
            "--unit", "video", "--out", str(out_dir),
        ]) == EXIT_OK
        doc = json.loads((out_dir / "report.json").read_text())
        assert doc["unit"] == "video"
        assert doc["total"] == 18
        # strict rule can only lower accuracy relative to frames
        frame_doc = json.loads((pred).read_text())
        frame_acc = 100.0 * np.mean([
            e["predicted"] == e["true_label"] for e in frame_doc["predictions"]
        ])
        assert doc["overall_accuracy"] <= frame_acc + 1e-9

    def test_global_only_bundle_ignores_extra_store_regions(self, tmp_path, caplog):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--classes", "2", "--subjects", "4",
              "--videos-per-subject", "1", "--frames", "2", "--maps", "4",
              "--height", "7", "--width", "7", "--separation", "1.5"])
        manifest = data / "manifest.json"
        store = tmp_path / "store"
        main(["extract", "--manifest", str(manifest), "--store", str(store),
              "--regions", "global,eyes", "--resize", "14x14"])
        bundle = tmp_path / "bundle"
        assert main([
            "train", "--manifest", str(manifest), "--store", str(store),
            "--out", str(bundle), "--regions", "global",
            "--gamma-grid", "1e-3", "--cost-grid", "1e3", "--folds", "2",
        ]) == EXIT_OK
        out = tmp_path / "pred.json"
        assert main([
            "predict", "--bundle", str(bundle), "--manifest", str(manifest),
            "--store", str(store), "--unit", "frame", "--out", str(out),
        ]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert len(doc["predictions"]) == 16

    def test_unknown_flag_is_usage_error(self):
        assert main(["predict", "--bogus"]) == EXIT_USAGE

    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == EXIT_USAGE
