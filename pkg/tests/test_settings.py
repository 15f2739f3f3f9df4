import json
import logging

import pytest

from modules.errors import ConfigError
from modules.settings_manager import (
    DEVICE_ENV_VAR,
    SettingsManager,
    TrainingConfig,
    profile_config,
)


def test_profiles_set_network_and_crop_sizes():
    desk = profile_config("desk")
    paper = profile_config("paper")
    assert (desk.generator.base_width, desk.generator.n_residual_blocks) == (8, 2)
    assert (desk.augment.load_size, desk.augment.crop_size) == (72, 64)
    assert (paper.generator.base_width, paper.generator.n_residual_blocks) == (64, 9)
    assert (paper.augment.load_size, paper.augment.crop_size) == (286, 256)
    assert paper.discriminator.n_layers == 3


def test_unknown_profile_is_config_error():
    with pytest.raises(ConfigError):
        profile_config("laptop")


@pytest.mark.parametrize("epochs", [0, 1, 3, 199])
def test_epochs_total_must_be_even(epochs):
    with pytest.raises(ValueError):
        TrainingConfig(epochs_total=epochs)


def test_derived_epochs_from_iteration_budget():
    config = TrainingConfig(iteration_budget=1000)
    assert config.resolve_epochs(80) == 12
    assert config.resolve_epochs(5000) == 2
    assert TrainingConfig(epochs_total=200).resolve_epochs(7) == 200


def test_ablation_switches_zero_the_weights():
    config = TrainingConfig(disable_cycle=True, disable_identity=True)
    weights = config.effective_weights()
    assert weights.lambda2 == 0.0
    assert weights.lambda3 == 0.0
    assert (weights.lambda1, weights.lambda4) == (1.0, 150.0)
    assert config.weights.lambda2 == 10.0


def test_missing_default_settings_file_falls_back(tmp_path, monkeypatch, caplog):
    monkeypatch.chdir(tmp_path)
    with caplog.at_level(logging.WARNING):
        config = SettingsManager.load_training_config()
    assert config.profile == "desk"
    assert "not found" in caplog.text


def test_explicit_missing_settings_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        SettingsManager.load_training_config(str(tmp_path / "nope.json"))


def test_invalid_settings_file_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"lr_base": -1}), encoding="utf-8")
    with pytest.raises(ConfigError):
        SettingsManager.load_training_config(str(path))
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        SettingsManager.load_training_config(str(path))


def test_file_values_override_profile_and_flags_override_file(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"profile": "paper", "lr_base": 1e-3, "weights": {"lambda4": 100}}), encoding="utf-8")
    config = SettingsManager.load_training_config(str(path))
    assert config.profile == "paper"
    assert config.generator.base_width == 64
    assert config.lr_base == 1e-3
    assert config.weights.lambda4 == 100
    assert config.weights.lambda2 == 10

    config = SettingsManager.apply_overrides(config, {"lr_base": 5e-4, "seed": None, "weights": {"lambda1": 2.0}})
    assert config.lr_base == 5e-4
    assert config.seed == 0
    assert config.weights.lambda1 == 2.0
    assert config.weights.lambda4 == 100


def test_save_then_load_keeps_values(tmp_path):
    path = str(tmp_path / "out.json")
    config = profile_config("desk", seed=11, disable_cycle=True)
    SettingsManager.save_training_config(config, path)
    assert SettingsManager.load_training_config(path) == config


def test_device_environment_variable_wins(monkeypatch):
    monkeypatch.setenv(DEVICE_ENV_VAR, "cpu")
    assert TrainingConfig(device="cuda:3").resolve_device() == "cpu"
    monkeypatch.delenv(DEVICE_ENV_VAR)
    assert TrainingConfig(device="cuda:3").resolve_device() == "cuda:3"
