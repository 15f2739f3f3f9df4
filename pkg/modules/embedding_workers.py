import logging
from abc import ABC, abstractmethod

import torch
import torch.nn as nn

from .errors import ConfigError
from .settings_manager import BackboneConfig

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BaseEmbeddingBackbone(ABC):
    """Abstract base class for networks mapping images to feature vectors."""

    input_size: int
    dim: int

    @abstractmethod
    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        """(N, 3, S, S) images in [-1, 1] -> (N, dim) float64 features."""
        pass

    def check_input(self, batch: torch.Tensor) -> None:
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise ConfigError(f"Backbone expects (N, 3, S, S) input, got {tuple(batch.shape)}")
        if batch.shape[-2:] != (self.input_size, self.input_size):
            raise ConfigError(
                f"Backbone configured for {self.input_size}x{self.input_size} input, "
                f"got {batch.shape[-2]}x{batch.shape[-1]}"
            )


class RandomProjectionBackbone(BaseEmbeddingBackbone):
    """Fixed seeded linear projection; needs no downloaded weights."""

    def __init__(self, input_size: int, dim: int, seed: int = 0):
        self.input_size = input_size
        self.dim = dim
        gen = torch.Generator().manual_seed(seed)
        n_in = 3 * input_size * input_size
        self.weight = torch.randn(dim, n_in, generator=gen, dtype=torch.float64) / n_in**0.5
        self.bias = torch.randn(dim, generator=gen, dtype=torch.float64)

    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        self.check_input(batch)
        flat = batch.to(torch.float64).reshape(batch.shape[0], -1)
        return flat @ self.weight.T + self.bias


class ResNetBackbone(BaseEmbeddingBackbone):
    """Penultimate (global-pooled) activations of an ImageNet-pretrained ResNet50."""

    def __init__(self, input_size: int = 224, device: str = "cpu"):
        from torchvision.models import ResNet50_Weights, resnet50

        self.input_size = input_size
        self.dim = 2048
        self.device = device
        logging.info("Loading ImageNet-pretrained ResNet50 for feature extraction.")
        model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
        model.fc = nn.Identity()
        self.model = model.eval().to(device)
        self.mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1).to(device)
        self.std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1).to(device)

    @torch.no_grad()
    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        self.check_input(batch)
        x = (batch.to(self.device, torch.float32) + 1.0) / 2.0
        x = (x - self.mean) / self.std
        return self.model(x).to("cpu", torch.float64)


def build_backbone(cfg: BackboneConfig, device: str = "cpu") -> BaseEmbeddingBackbone:
    if cfg.kind == "random_projection":
        logging.debug(f"Using random projection backbone (dim={cfg.dim}, seed={cfg.seed}).")
        return RandomProjectionBackbone(cfg.input_size, cfg.dim, cfg.seed)
    return ResNetBackbone(cfg.input_size, device=device)
