import csv
import json

import pytest

from modules.cli import EXIT_OK, EXIT_USAGE, main
from modules.settings_manager import SettingsManager


def test_synth_writes_requested_images(tmp_path):
    out = tmp_path / "toy"
    assert main(["synth", "--n-paired", "1", "--n-unpaired", "10", "--size", "64", "--seed", "0", "--out", str(out)]) == EXIT_OK
    assert len(list(out.rglob("*.png"))) == 22
    assert (out / "manifest.json").is_file()


def test_too_small_image_size_is_usage_error(tmp_path):
    assert main(["synth", "--n-paired", "1", "--n-unpaired", "1", "--size", "8", "--out", str(tmp_path)]) == EXIT_USAGE


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--n-paired", "1", "--n-unpaired", "1", "--bogus", "--out", str(tmp_path)])
    assert info.value.code == EXIT_USAGE


def test_missing_manifest_fails(tmp_path):
    code = main(["select", "--manifest", str(tmp_path / "nope.json"), "--budget", "1", "--strategy", "random", "--out", str(tmp_path / "s.json")])
    assert code != EXIT_OK


def test_unpaired_only_and_selection_exclude_each_other(toy_dataset, tmp_path):
    root, _ = toy_dataset
    code = main(
        ["train", "--manifest", str(root / "manifest.json"), "--unpaired-only", "--selection", "x.json", "--out", str(tmp_path / "run")]
    )
    assert code == EXIT_USAGE


def test_pipeline_end_to_end(toy_dataset, tiny_config, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    root, _ = toy_dataset
    config_path = tmp_path / "tiny.json"
    SettingsManager.save_training_config(tiny_config, str(config_path))

    selection = tmp_path / "selection.json"
    assert main(
        [
            "select", "--manifest", str(root / "manifest.json"), "--budget", "1",
            "--backbone", "random_projection", "--seed", "0", "--out", str(selection),
        ]
    ) == EXIT_OK
    assert len(json.loads(selection.read_text(encoding="utf-8"))["selected_ids"]) == 1

    run = tmp_path / "run"
    assert main(
        [
            "train", "--manifest", str(root / "manifest.json"), "--selection", str(selection),
            "--config", str(config_path), "--epochs", "2", "--plot", "--out", str(run),
        ]
    ) == EXIT_OK
    assert (run / "final.pt").is_file()
    assert (run / "train-settings.json").is_file()
    assert (run / "training_curves.png").is_file()
    assert json.loads((run / "run.json").read_text(encoding="utf-8"))["overrides"] == {"epochs_total": 2}

    report = tmp_path / "report.json"
    assert main(
        [
            "eval", "--checkpoint", str(run / "final.pt"), "--manifest", str(root / "test_manifest.json"),
            "--protocol", "segmentation", "--out", str(report),
        ]
    ) == EXIT_OK
    data = json.loads(report.read_text(encoding="utf-8"))
    assert data["n_images"] == 2
    assert data["run_info"]["n_paired"] == 1

    summary = tmp_path / "summary"
    assert main(["summarize", "--reports", str(report), "--out", str(summary)]) == EXIT_OK
    with open(summary / "summary.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["n_paired"] == "1"
    assert "mean_iou_mean" in rows[0]


def test_maps_with_colormap_is_usage_error(toy_dataset, tmp_path):
    root, _ = toy_dataset
    code = main(
        [
            "eval", "--checkpoint", str(tmp_path / "missing.pt"), "--manifest", str(root / "test_manifest.json"),
            "--protocol", "maps", "--colormap", "cityscapes", "--out", str(tmp_path / "r.json"),
        ]
    )
    assert code == EXIT_USAGE


def test_unpaired_pool_selection_feeds_training(toy_dataset, tiny_config, tmp_path):
    root, _ = toy_dataset
    config_path = tmp_path / "tiny.json"
    SettingsManager.save_training_config(tiny_config, str(config_path))
    selection = tmp_path / "unpaired.json"
    assert main(
        [
            "select", "--manifest", str(root / "manifest.json"), "--budget", "2", "--pool", "unpaired",
            "--backbone", "random_projection", "--batch-size", "2", "--out", str(selection),
        ]
    ) == EXIT_OK
    data = json.loads(selection.read_text(encoding="utf-8"))
    assert data["pool"] == "unpaired"
    assert all(i.startswith("ux_") for i in data["selected_ids"])

    run = tmp_path / "run"
    assert main(
        [
            "train", "--manifest", str(root / "manifest.json"), "--unpaired-selection", str(selection),
            "--config", str(config_path), "--max-steps", "1", "--out", str(run),
        ]
    ) == EXIT_OK
    assert json.loads((run / "run.json").read_text(encoding="utf-8"))["unpaired_selection"] == str(selection)
    # a pool mismatch is a usage error
    code = main(
        ["train", "--manifest", str(root / "manifest.json"), "--selection", str(selection), "--out", str(tmp_path / "bad")]
    )
    assert code == EXIT_USAGE
