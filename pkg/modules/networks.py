import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from .errors import ConfigError, InvalidInputError
from .settings_manager import DiscriminatorConfig, GeneratorConfig

CHECKPOINT_FORMAT_VERSION: int = 1
INIT_STD: float = 0.02

LayerSpec = Tuple[int, int]  # (kernel, stride)


def _norm_layer(channels: int, enabled: bool, affine: bool) -> nn.Module:
    if not enabled:
        return nn.Identity()
    return nn.InstanceNorm2d(channels, affine=affine, track_running_stats=False)


def init_weights(net: nn.Module, seed: int, std: float = INIT_STD) -> nn.Module:
    """Zero-mean Gaussian conv weights drawn from a seeded generator, zero biases."""
    gen = torch.Generator().manual_seed(seed % 2**63)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.InstanceNorm2d) and module.affine:
                module.weight.copy_(1.0 + torch.randn(module.weight.shape, generator=gen) * std)
                module.bias.zero_()
    return net


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, norm: bool, affine: bool):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            _norm_layer(channels, norm, affine),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            _norm_layer(channels, norm, affine),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """
    c7s1-w, two stride-2 downsampling convs, n residual blocks, two fractional-stride
    upsampling convs, c7s1-3 with tanh. Reflection padding, instance normalization.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers: List[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.input_channels, w, kernel_size=7),
            _norm_layer(w, cfg.norm, cfg.norm_affine),
            nn.ReLU(inplace=True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(w * mult, w * mult * 2, kernel_size=3, stride=2, padding=1),
                _norm_layer(w * mult * 2, cfg.norm, cfg.norm_affine),
                nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(w * 4, cfg.norm, cfg.norm_affine) for _ in range(cfg.n_residual_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(
                    w * mult, w * mult // 2, kernel_size=3, stride=2, padding=1, output_padding=1
                ),
                _norm_layer(w * mult // 2, cfg.norm, cfg.norm_affine),
                nn.ReLU(inplace=True),
            ]
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(w, cfg.output_channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def discriminator_layer_specs(cfg: DiscriminatorConfig) -> List[LayerSpec]:
    """n stride-2 4x4 convs, one stride-1 4x4 conv, then the stride-1 4x4 logit conv."""
    return [(4, 2)] * cfg.n_layers + [(4, 1), (4, 1)]


class PatchDiscriminator(nn.Module):
    """Fully convolutional; emits a raw logit map (no sigmoid)."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers: List[nn.Module] = [
            nn.Conv2d(cfg.input_channels, w, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        width = w
        for i in range(1, cfg.n_layers + 1):
            next_width = w * min(2**i, 8)
            stride = 2 if i < cfg.n_layers else 1
            layers += [
                nn.Conv2d(width, next_width, kernel_size=4, stride=stride, padding=1),
                _norm_layer(next_width, cfg.norm, cfg.norm_affine),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            width = next_width
        layers.append(nn.Conv2d(width, 1, kernel_size=4, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def build_generator(cfg: GeneratorConfig, seed: int) -> ResnetGenerator:
    if cfg.n_residual_blocks < 1 or cfg.base_width < 1:
        raise ConfigError(f"Invalid generator config: {cfg}")
    return init_weights(ResnetGenerator(cfg), seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: int) -> PatchDiscriminator:
    if cfg.n_layers < 1 or cfg.base_width < 1:
        raise ConfigError(f"Invalid discriminator config: {cfg}")
    return init_weights(PatchDiscriminator(cfg), seed)


def receptive_field(cfg: Union[DiscriminatorConfig, Sequence[LayerSpec]]) -> int:
    """Receptive field of one output logit: r <- (r - 1) * stride + kernel, from the top layer down."""
    layers = discriminator_layer_specs(cfg) if isinstance(cfg, DiscriminatorConfig) else list(cfg)
    r = 1
    for kernel, stride in reversed(layers):
        r = (r - 1) * stride + kernel
    return r


def translate(generator: ResnetGenerator, x: torch.Tensor) -> torch.Tensor:
    """Inference-mode forward pass; accepts (3, H, W) or (N, 3, H, W)."""
    single = x.ndim == 3
    batch = x.unsqueeze(0) if single else x
    if batch.ndim != 4 or batch.shape[1] != generator.cfg.input_channels:
        raise InvalidInputError(f"Expected (N, {generator.cfg.input_channels}, H, W), got {tuple(x.shape)}")
    if batch.shape[-2] % 4 or batch.shape[-1] % 4:
        raise InvalidInputError(f"Spatial size must be divisible by 4, got {tuple(batch.shape[-2:])}")
    param = next(generator.parameters())
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(batch.to(param.device, param.dtype))
    finally:
        generator.train(was_training)
    return out[0] if single else out


@dataclass
class ModelState:
    g_xy: ResnetGenerator
    g_yx: ResnetGenerator
    d_x: PatchDiscriminator
    d_y: PatchDiscriminator
    generator_config: GeneratorConfig
    discriminator_config: DiscriminatorConfig
    step: int = 0
    epoch: int = 0

    def networks(self) -> Dict[str, nn.Module]:
        return {"g_xy": self.g_xy, "g_yx": self.g_yx, "d_x": self.d_x, "d_y": self.d_y}

    def generator_parameters(self) -> List[nn.Parameter]:
        return list(self.g_xy.parameters()) + list(self.g_yx.parameters())

    def to(self, device: Union[str, torch.device]) -> "ModelState":
        for net in self.networks().values():
            net.to(device)
        return self


def build_model_state(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed: int) -> ModelState:
    return ModelState(
        g_xy=build_generator(gen_cfg, seed * 4 + 0),
        g_yx=build_generator(gen_cfg, seed * 4 + 1),
        d_x=build_discriminator(disc_cfg, seed * 4 + 2),
        d_y=build_discriminator(disc_cfg, seed * 4 + 3),
        generator_config=gen_cfg,
        discriminator_config=disc_cfg,
    )


def atomic_torch_save(payload: Dict[str, Any], path: Union[str, Path]) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    torch.save(payload, tmp_path)
    os.replace(tmp_path, out_path)


def save_model_state(
    state: ModelState, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None
) -> None:
    """Self-describing checkpoint: version, configs, counters and every parameter tensor."""
    payload: Dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "generator_config": state.generator_config.model_dump(mode="json"),
        "discriminator_config": state.discriminator_config.model_dump(mode="json"),
        "step": state.step,
        "epoch": state.epoch,
        "networks": {name: {k: v.detach().cpu() for k, v in net.state_dict().items()} for name, net in state.networks().items()},
    }
    if extra:
        payload.update(extra)
    atomic_torch_save(payload, path)
    logging.debug(f"Checkpoint written: {path} (step {state.step}, epoch {state.epoch})")


def read_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as e:
        logging.error(f"Cannot read checkpoint '{path}': {e}", exc_info=True)
        raise ConfigError(f"Cannot read checkpoint '{path}': {e}") from e
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version is None or version > CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"Unsupported checkpoint format version {version!r} in '{path}'")
    return payload


def model_state_from_payload(payload: Dict[str, Any], device: str = "cpu") -> ModelState:
    gen_cfg = GeneratorConfig.model_validate(payload["generator_config"])
    disc_cfg = DiscriminatorConfig.model_validate(payload["discriminator_config"])
    state = build_model_state(gen_cfg, disc_cfg, seed=0)
    for name, net in state.networks().items():
        net.load_state_dict(payload["networks"][name])
    state.step = int(payload.get("step", 0))
    state.epoch = int(payload.get("epoch", 0))
    return state.to(device)


def load_model_state(path: Union[str, Path], device: str = "cpu") -> ModelState:
    return model_state_from_payload(read_checkpoint(path), device)
