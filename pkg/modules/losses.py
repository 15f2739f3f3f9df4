"""
Objective terms of the hybrid paired/unpaired translation model.

Adversarial terms use the relativistic formulation on raw discriminator logits;
everything is written as a quantity to minimize.
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, Union

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractViolationError, InvalidInputError
from .settings_manager import LossWeights

Scalar = Union[float, torch.Tensor]


@dataclass
class LossReport:
    gan_g: float = 0.0
    gan_d: float = 0.0
    cycle: float = 0.0
    identity: float = 0.0
    l1_paired: float = 0.0
    total: float = 0.0
    is_paired: bool = False

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def components(self) -> Dict[str, float]:
        return {k: v for k, v in asdict(self).items() if k != "is_paired"}

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.components().values())


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def relativistic_d_loss(c_real: torch.Tensor, c_fake: torch.Tensor) -> torch.Tensor:
    """mean(-log sigmoid(C(real) - C(fake))), via softplus for stability."""
    _same_shape(c_real, c_fake, "relativistic_d_loss")
    return F.softplus(-(c_real - c_fake)).mean()


def relativistic_g_loss(c_real: torch.Tensor, c_fake: torch.Tensor) -> torch.Tensor:
    """mean(-log sigmoid(C(fake) - C(real)))."""
    _same_shape(c_real, c_fake, "relativistic_g_loss")
    return F.softplus(-(c_fake - c_real)).mean()


def _l1(a: torch.Tensor, b: torch.Tensor, what: str) -> torch.Tensor:
    _same_shape(a, b, what)
    return (a - b).abs().mean()


def cycle_loss(
    x: torch.Tensor, x_cyc: torch.Tensor, y: torch.Tensor, y_cyc: torch.Tensor
) -> torch.Tensor:
    return _l1(x_cyc, x, "cycle_loss (X)") + _l1(y_cyc, y, "cycle_loss (Y)")


def identity_loss(
    x: torch.Tensor, g_yx_of_x: torch.Tensor, y: torch.Tensor, g_xy_of_y: torch.Tensor
) -> torch.Tensor:
    return _l1(g_yx_of_x, x, "identity_loss (X)") + _l1(g_xy_of_y, y, "identity_loss (Y)")


def paired_l1_loss(
    fake_y: torch.Tensor,
    y: torch.Tensor,
    fake_x: torch.Tensor,
    x: torch.Tensor,
    is_paired: bool = True,
) -> torch.Tensor:
    if not is_paired:
        raise ContractViolationError("paired_l1_loss called on an unpaired batch")
    return _l1(fake_y, y, "paired_l1_loss (Y)") + _l1(fake_x, x, "paired_l1_loss (X)")


def _check_weights(weights: LossWeights) -> None:
    for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
        value = getattr(weights, name)
        if value < 0 or not math.isfinite(value):
            raise ConfigError(f"Loss weight {name} must be a finite value >= 0, got {value}")


def total_generator_loss(
    components: Union[LossReport, Dict[str, Scalar]],
    weights: LossWeights,
    is_paired: bool,
) -> Scalar:
    """lambda1*gan + lambda2*cycle + lambda3*identity (+ lambda4*l1 on paired batches)."""
    _check_weights(weights)
    parts = components.as_dict() if isinstance(components, LossReport) else components
    total = (
        weights.lambda1 * parts["gan_g"]
        + weights.lambda2 * parts["cycle"]
        + weights.lambda3 * parts["identity"]
    )
    if is_paired:
        total = total + weights.lambda4 * parts["l1_paired"]
    return total
