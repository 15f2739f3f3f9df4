import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SETTINGS_FILE: str = "train-settings.json"
DEVICE_ENV_VAR: str = "HYBRID_TRANSLATE_DEVICE"

ProfileName = Literal["desk", "paper"]


# Pydantic models for every configurable piece of a run
class LossWeights(BaseModel):
    lambda1: float = Field(default=1.0, ge=0.0)  # adversarial
    lambda2: float = Field(default=10.0, ge=0.0)  # cycle
    lambda3: float = Field(default=10.0, ge=0.0)  # identity
    lambda4: float = Field(default=150.0, ge=0.0)  # paired L1


class GeneratorConfig(BaseModel):
    input_channels: int = Field(default=3, ge=1)
    output_channels: int = Field(default=3, ge=1)
    base_width: int = Field(default=64, ge=1)
    n_residual_blocks: int = Field(default=9, ge=1)
    norm: bool = True
    norm_affine: bool = False


class DiscriminatorConfig(BaseModel):
    input_channels: int = Field(default=3, ge=1)
    base_width: int = Field(default=64, ge=1)
    n_layers: int = Field(default=3, ge=1)
    norm: bool = True
    norm_affine: bool = False


class AugmentConfig(BaseModel):
    load_size: int = Field(default=286, ge=1)
    crop_size: int = Field(default=256, ge=1)
    flip: bool = True

    @model_validator(mode="after")
    def crop_fits(self) -> "AugmentConfig":
        if self.crop_size > self.load_size:
            raise ValueError(
                f"crop_size {self.crop_size} exceeds load_size {self.load_size}"
            )
        return self


class BackboneConfig(BaseModel):
    # input resolution and normalization for the embedding network
    kind: Literal["resnet50", "random_projection"] = "resnet50"
    input_size: int = Field(default=224, ge=8)
    dim: int = Field(default=2048, ge=1)
    seed: int = 0
    batch_size: int = Field(default=16, ge=1)


class TrainingConfig(BaseModel):
    profile: ProfileName = "desk"
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    lr_base: float = Field(default=2e-4, gt=0.0)
    betas: Tuple[float, float] = (0.5, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)
    # None: derived from iteration_budget and the schedule length
    epochs_total: Optional[int] = None
    iteration_budget: int = Field(default=2000, ge=1)
    batch_size: Literal[1] = 1
    pool_capacity: int = Field(default=50, ge=0)
    seed: int = 0
    disable_cycle: bool = False
    disable_identity: bool = False
    identity_on_paired: bool = True
    balanced: bool = True
    checkpoint_interval: int = Field(default=1, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=1)
    num_workers: int = Field(default=0, ge=0)
    deterministic: bool = True
    device: Optional[str] = None

    @field_validator("epochs_total")
    def epochs_must_be_even(cls, v):
        if v is not None and (v < 2 or v % 2 != 0):
            raise ValueError(
                f"epochs_total must be an even number >= 2 (constant half + decay half), got {v}"
            )
        return v

    def effective_weights(self) -> LossWeights:
        """Loss weights with the ablation switches applied."""
        return self.weights.model_copy(
            update={
                "lambda2": 0.0 if self.disable_cycle else self.weights.lambda2,
                "lambda3": 0.0 if self.disable_identity else self.weights.lambda3,
            }
        )

    def resolve_epochs(self, schedule_length: int) -> int:
        if self.epochs_total is not None:
            return self.epochs_total
        raw = self.iteration_budget / max(1, schedule_length)
        return max(2, 2 * round(raw / 2))

    def resolve_device(self) -> str:
        env_device = os.environ.get(DEVICE_ENV_VAR)
        if env_device:
            logging.debug(f"Device overridden by {DEVICE_ENV_VAR}={env_device}")
            return env_device
        if self.device:
            return self.device
        import torch

        return "cuda" if torch.cuda.is_available() else "cpu"


class RunConfig(BaseModel):
    command: str
    manifest: Optional[str] = None
    selection: Optional[str] = None
    unpaired_selection: Optional[str] = None
    checkpoint: Optional[str] = None
    out_dir: Optional[str] = None
    profile: ProfileName = "desk"
    seed: int = 0
    overrides: Dict[str, Any] = Field(default_factory=dict)


PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {
        "profile": "desk",
        "generator": {"base_width": 8, "n_residual_blocks": 2},
        "discriminator": {"base_width": 8, "n_layers": 3},
        "augment": {"load_size": 72, "crop_size": 64},
    },
    "paper": {
        "profile": "paper",
        "generator": {"base_width": 64, "n_residual_blocks": 9},
        "discriminator": {"base_width": 64, "n_layers": 3},
        "augment": {"load_size": 286, "crop_size": 256},
    },
}


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def profile_config(profile: str = "desk", **overrides: Any) -> TrainingConfig:
    """Builds a TrainingConfig from a named profile plus keyword overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"Unknown profile '{profile}', expected one of {sorted(PROFILES)}")
    try:
        return TrainingConfig.model_validate(_deep_merge(PROFILES[profile], overrides))
    except ValidationError as e:
        raise ConfigError(f"Invalid overrides for profile '{profile}': {e}") from e


class SettingsManager:
    DEFAULT_PROFILE: str = "desk"

    @staticmethod
    def load_training_config(
        path: Optional[str] = None, profile: Optional[str] = None
    ) -> TrainingConfig:
        """
        Loads a training config: profile defaults, then the JSON settings file on top.
        A missing default settings file falls back to the profile; a named file must be valid.
        """
        explicit = path is not None
        settings_path = path or SETTINGS_FILE
        raw_data: Dict[str, Any] = {}
        try:
            if os.path.exists(settings_path):
                with open(settings_path, "r", encoding="utf-8") as f:
                    raw_data = json.load(f)
                logging.debug(f"Settings file '{settings_path}' loaded.")
            elif explicit:
                raise ConfigError(f"Config file '{settings_path}' not found.")
            else:
                logging.warning(
                    f"Settings file '{settings_path}' not found. Using profile defaults."
                )
        except (json.JSONDecodeError, OSError) as e:
            logging.error(f"Error reading config '{settings_path}': {e}")
            raise ConfigError(f"Cannot read config '{settings_path}': {e}") from e

        if not isinstance(raw_data, dict):
            raise ConfigError(f"Config '{settings_path}' must hold a JSON object.")

        chosen_profile = profile or raw_data.get("profile") or SettingsManager.DEFAULT_PROFILE
        if chosen_profile not in PROFILES:
            raise ConfigError(f"Unknown profile '{chosen_profile}'")
        merged = _deep_merge(PROFILES[chosen_profile], raw_data)
        merged["profile"] = chosen_profile
        try:
            config = TrainingConfig.model_validate(merged)
        except ValidationError as e:
            logging.error(f"Validation error in config '{settings_path}': {e}")
            raise ConfigError(f"Invalid config '{settings_path}': {e}") from e
        return config

    @staticmethod
    def apply_overrides(config: TrainingConfig, overrides: Dict[str, Any]) -> TrainingConfig:
        """Flag values win over file values; None entries are ignored."""
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        if not cleaned:
            return config
        try:
            return TrainingConfig.model_validate(
                _deep_merge(config.model_dump(), cleaned)
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid command-line overrides: {e}") from e

    @staticmethod
    def save_training_config(config: TrainingConfig, path: Optional[str] = None) -> None:
        settings_path = path or SETTINGS_FILE
        try:
            with open(settings_path, "w", encoding="utf-8") as f:
                json.dump(config.model_dump(mode="json"), f, indent=2, ensure_ascii=False)
            logging.debug(f"Settings successfully saved to {settings_path}")
        except OSError as e:
            logging.error(f"Error saving config to {settings_path}: {e}")
            raise

    @staticmethod
    def save_run_config(run_config: RunConfig, path: Union[str, Path]) -> None:
        """Records what a command was asked to do, next to its outputs."""
        run_path = Path(path)
        run_path.parent.mkdir(parents=True, exist_ok=True)
        with open(run_path, "w", encoding="utf-8") as f:
            json.dump(run_config.model_dump(mode="json"), f, indent=2, sort_keys=True)
            f.write("\n")
        logging.debug(f"Run record written to {run_path}")
