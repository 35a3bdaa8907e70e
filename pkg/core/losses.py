"""
Loss functions for sdmseg
Dice and SDM regression losses, the supervised multi-task loss, the
adversarial discriminator/generator losses and the warm-up schedule
"""
import math
from dataclasses import dataclass

import torch

from core.errors import ShapeMismatchError, ValidationError

DICE_SMOOTH = 1e-5
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta_max: float = 0.001
    t_max: int = 6000

    def __post_init__(self):
        if self.alpha < 0 or self.beta_max < 0:
            raise ValidationError(f"alpha and beta_max must be non-negative, got {self.alpha}, {self.beta_max}")
        if self.t_max < 1:
            raise ValidationError(f"t_max must be positive, got {self.t_max}")


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def dice_loss(m: torch.Tensor, y: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """
    Soft dice loss averaged over the batch (dim 0)

    Per item: 1 - (2 * sum(m * y) + smooth) / (sum(m) + sum(y) + smooth)
    """
    _check_shapes(m, y)
    y = y.to(m.dtype)
    dims = tuple(range(1, m.dim()))
    intersection = (m * y).sum(dim=dims)
    total = m.sum(dim=dims) + y.sum(dim=dims)
    return (1.0 - (2.0 * intersection + smooth) / (total + smooth)).mean()


def mse_sdm_loss(s: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and ground-truth SDMs"""
    _check_shapes(s, z)
    return ((s - z.to(s.dtype)) ** 2).mean()


def supervised_loss(m: torch.Tensor, y: torch.Tensor, s: torch.Tensor, z: torch.Tensor,
                    alpha: float) -> torch.Tensor:
    """Dice loss plus ``alpha`` times the SDM loss, both batch means"""
    loss = dice_loss(m, y)
    if alpha == 0 or s is None:
        return loss
    return loss + alpha * mse_sdm_loss(s, z)


def discriminator_loss(d_labeled: torch.Tensor, d_unlabeled: torch.Tensor) -> torch.Tensor:
    """
    Binary cross entropy of the discriminator

    Labeled pairs are the positive class; minimising this maximises the
    adversarial objective over the discriminator parameters.
    """
    d_labeled = d_labeled.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    d_unlabeled = d_unlabeled.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(torch.log(d_labeled).mean() + torch.log(1.0 - d_unlabeled).mean())


def generator_loss(d_unlabeled: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator surrogate on unlabeled pairs; beta is applied by the caller"""
    return -torch.log(d_unlabeled.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).mean()


def beta_schedule(t: float, t_max: int, beta_max: float = 0.001) -> float:
    """
    Gaussian warm-up of the adversarial weight

    beta_max * exp(-5 * (1 - t / t_max)^2), with t clamped to t_max.
    """
    if t < 0:
        raise ValidationError(f"iteration must be non-negative, got {t}")
    if t_max < 1:
        raise ValidationError(f"t_max must be positive, got {t_max}")
    phase = 1.0 - min(t, t_max) / t_max
    return beta_max * math.exp(-5.0 * phase * phase)
