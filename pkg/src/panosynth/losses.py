"""Training objectives: hinge adversarial losses, pixel reconstruction,
weighted perceptual distance, Gram-matrix appearance terms, and the
weighted total used to update the generator side.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

PERCEPTUAL_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)


@dataclass(frozen=True)
class LossWeights:
    box: float = 1.0
    img: float = 0.1
    obj: float = 1.0
    per: float = 1.0
    rec: float = 1.0
    app: float = 1.0


@dataclass
class LossParts:
    box: torch.Tensor | float = 0.0
    img: torch.Tensor | float = 0.0
    obj: torch.Tensor | float = 0.0
    per: torch.Tensor | float = 0.0
    rec: torch.Tensor | float = 0.0
    app: torch.Tensor | float = 0.0


def hinge_disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake)); empty means are 0."""
    if real_scores.numel() == 0 and fake_scores.numel() == 0:
        return real_scores.new_zeros(())
    real = torch.clamp(1.0 - real_scores, min=0.0).mean() if real_scores.numel() else 0.0
    fake = torch.clamp(1.0 + fake_scores, min=0.0).mean() if fake_scores.numel() else 0.0
    return real + fake


def hinge_gen_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """-mean(fake_scores); zero for an empty score vector."""
    if fake_scores.numel() == 0:
        return fake_scores.new_zeros(())
    return -fake_scores.mean()


def reconstruction_loss(real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel difference."""
    return (real - fake).abs().mean()


def perceptual_loss(real: torch.Tensor, fake: torch.Tensor, extractor) -> torch.Tensor:
    """Weighted sum of mean absolute feature gaps across extractor layers."""
    feats_r = extractor(real)
    feats_f = extractor(fake)
    total = real.new_zeros(())
    for w, fr, ff in zip(extractor.layer_weights, feats_r, feats_f):
        total = total + w * (fr - ff).abs().mean()
    return total


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """(C, H, W) features -> (C, C) Gram matrix F^T F / (H W)."""
    c, h, w = features.shape
    flat = features.reshape(c, h * w)
    return flat @ flat.T / (h * w)


def total_generator_loss(parts: LossParts, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the six generator-side loss terms."""
    total = 0.0
    for f in fields(LossParts):
        total = total + getattr(weights, f.name) * getattr(parts, f.name)
    return total if isinstance(total, torch.Tensor) else torch.tensor(total)
