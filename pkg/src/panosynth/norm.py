"""Instance- and stuff-aware feature normalization.

Pipeline per generator block: threshold the summed instance layout into a
foreground mask, refine each instance mask with a learned guided filter
against the block's features, project refined instance masks and the stuff
layout through label-embedding tables, gate the two embeddings with the
foreground mask into per-pixel (gamma, beta), and apply them on top of a
standard batch normalization.

The hard foreground threshold is non-differentiable; the mask is computed
from detached layout sums so gradients reach the instance branch only
through the embedding numerators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import CategoryOutOfRange, ShapeMismatch

EMBED_EPS = 1e-6
DEFAULT_TAU = 0.1


def foreground_mask(instance_masks: torch.Tensor, tau: float = DEFAULT_TAU) -> torch.Tensor:
    """Binary (H, W) map: 1 where the summed instance mass exceeds tau.

    `instance_masks` is the (n, H, W) layout stack; n = 0 gives all zeros.
    """
    if instance_masks.shape[0] == 0:
        return torch.zeros(instance_masks.shape[1:], dtype=instance_masks.dtype)
    total = instance_masks.detach().sum(dim=0)
    return (total > tau).to(instance_masks.dtype)


class GuidedFilterIntermediates(NamedTuple):
    guide: torch.Tensor       # X_g, single-channel reduction of the projection
    guide_mean: torch.Tensor  # box-filtered guide
    mask_mean: torch.Tensor   # box-filtered masks
    var_gg: torch.Tensor
    cov_gm: torch.Tensor
    A: torch.Tensor
    b: torch.Tensor


class GuidedFilter(nn.Module):
    """Learned guided filter refining instance masks against features.

    The feature map is projected to three channels by a 3x3 convolution and
    averaged into a single guide channel; means use a fixed uniform 3x3 box
    filter; the per-pixel slope A comes from three pointwise layers applied
    to the (variance, covariance) statistics; b = mask_mean - A * guide_mean;
    the refined mask is A * mask + b.
    """

    def __init__(self, feature_channels: int, hidden: int = 16):
        super().__init__()
        self.feature_channels = feature_channels
        self.project = nn.Conv2d(feature_channels, 3, 3, padding=1)
        self.a_net = nn.Sequential(
            nn.Conv2d(2, hidden, 1), nn.ReLU(),
            nn.Conv2d(hidden, hidden, 1), nn.ReLU(),
            nn.Conv2d(hidden, 1, 1),
        )
        kernel = torch.full((1, 1, 3, 3), 1.0 / 9.0)
        self.register_buffer("box_kernel", kernel)

    def _box(self, x: torch.Tensor) -> torch.Tensor:
        # x: (n, 1, H, W); zero padding, exact average at interior pixels
        return F.conv2d(x, self.box_kernel.to(x.dtype), padding=1)

    def forward(
        self,
        masks: torch.Tensor,
        features: torch.Tensor,
        return_intermediates: bool = False,
    ):
        """masks: (n, H, W); features: (C, H, W) -> refined (n, H, W)."""
        if masks.dim() != 3 or features.dim() != 3:
            raise ShapeMismatch("expected (n,H,W) masks and (C,H,W) features")
        if masks.shape[1:] != features.shape[1:]:
            raise ShapeMismatch(
                f"spatial shapes differ: {tuple(masks.shape[1:])} vs {tuple(features.shape[1:])}"
            )
        if features.shape[0] != self.feature_channels:
            raise ShapeMismatch(
                f"features have {features.shape[0]} channels, expected {self.feature_channels}"
            )
        n = masks.shape[0]
        if n == 0:
            return (masks, None) if return_intermediates else masks

        guide = self.project(features.unsqueeze(0)).mean(dim=1, keepdim=True)  # (1,1,H,W)
        m = masks.unsqueeze(1)  # (n,1,H,W)
        g = guide.expand(n, -1, -1, -1)

        g_mean = self._box(g)
        m_mean = self._box(m)
        var_gg = self._box(g * g) - g_mean * g_mean
        cov_gm = self._box(g * m) - g_mean * m_mean

        A = self.a_net(torch.cat([var_gg, cov_gm], dim=1))
        b = m_mean - A * g_mean
        refined = A * m + b
        if return_intermediates:
            inter = GuidedFilterIntermediates(
                guide=guide[0, 0], guide_mean=g_mean[:, 0], mask_mean=m_mean[:, 0],
                var_gg=var_gg[:, 0], cov_gm=cov_gm[:, 0], A=A[:, 0], b=b[:, 0],
            )
            return refined[:, 0], inter
        return refined[:, 0]

    def refine_batch(
        self,
        masks: torch.Tensor,
        features: torch.Tensor,
        sample_idx: torch.Tensor,
    ) -> torch.Tensor:
        """Refine masks pooled across a batch of feature maps.

        masks: (N, H, W); features: (B, C, H, W); sample_idx: (N,) giving
        the feature map each mask belongs to. Equivalent to calling forward
        per sample but with a single projection / box-statistics pass.
        """
        if masks.shape[0] == 0:
            return masks
        guide = self.project(features).mean(dim=1, keepdim=True)  # (B,1,H,W)
        g = guide[sample_idx]
        m = masks.unsqueeze(1)

        g_mean = self._box(g)
        m_mean = self._box(m)
        var_gg = self._box(g * g) - g_mean * g_mean
        cov_gm = self._box(g * m) - g_mean * m_mean

        A = self.a_net(torch.cat([var_gg, cov_gm], dim=1))
        b = m_mean - A * g_mean
        return (A * m + b)[:, 0]


class EmbeddingTables(nn.Module):
    """Per-block label embeddings mapping categories to (gamma, beta) rows.

    Gamma rows initialize around one and beta rows around zero, with enough
    spread that category identity is visible in the features before any
    training. The background rows serve the instance-only ablation where no
    stuff layout exists.
    """

    def __init__(self, num_stuff: int, num_things: int, channels: int,
                 init_scale: float = 0.3):
        super().__init__()
        self.channels = channels
        def _gamma(rows):
            return nn.Parameter(1.0 + init_scale * torch.randn(rows, channels))
        def _beta(rows):
            return nn.Parameter(init_scale * torch.randn(rows, channels))
        self.stuff_gamma = _gamma(num_stuff)
        self.stuff_beta = _beta(num_stuff)
        self.thing_gamma = _gamma(max(num_things, 1))
        self.thing_beta = _beta(max(num_things, 1))
        self.background_gamma = _gamma(1)
        self.background_beta = _beta(1)


def embed_layouts(
    refined: torch.Tensor,
    raw: torch.Tensor,
    stuff: torch.Tensor | None,
    tables: EmbeddingTables,
    thing_channels: Sequence[int],
    eps: float = EMBED_EPS,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Project layouts into per-pixel embedding maps.

    refined/raw: (n, H, W) instance stacks (guided-filtered and original);
    stuff: (S, H, W) normalized stuff layout or None (instance-only mode);
    thing_channels: embedding row per instance slice.
    Returns (E_thing_gamma, E_thing_beta, E_stuff_gamma, E_stuff_beta),
    each (C, H, W).
    """
    if refined.shape != raw.shape:
        raise ShapeMismatch("refined and raw instance stacks must align")
    n, H, W = raw.shape if raw.dim() == 3 else (0, 0, 0)
    if len(thing_channels) != n:
        raise ShapeMismatch(f"{n} slices vs {len(thing_channels)} category ids")
    C = tables.channels

    if n:
        rows = max(int(c) for c in thing_channels)
        if rows >= tables.thing_gamma.shape[0] or min(thing_channels) < 0:
            raise CategoryOutOfRange(f"thing channel ids {thing_channels} out of table range")
        idx = torch.as_tensor(list(thing_channels), dtype=torch.long)
        denom = raw.sum(dim=0, keepdim=True) + eps  # (1, H, W)
        # (n,H,W) x (n,C) -> (C,H,W)
        num_g = torch.einsum("nhw,nc->chw", refined, tables.thing_gamma[idx])
        num_b = torch.einsum("nhw,nc->chw", refined, tables.thing_beta[idx])
        e_th_g = num_g / denom
        e_th_b = num_b / denom
    else:
        e_th_g = torch.zeros(C, H, W, dtype=refined.dtype)
        e_th_b = torch.zeros(C, H, W, dtype=refined.dtype)

    if stuff is not None:
        e_st_g = torch.einsum("shw,sc->chw", stuff, tables.stuff_gamma)
        e_st_b = torch.einsum("shw,sc->chw", stuff, tables.stuff_beta)
    else:
        e_st_g = tables.background_gamma[0].reshape(C, 1, 1).expand(C, H, W)
        e_st_b = tables.background_beta[0].reshape(C, 1, 1).expand(C, H, W)

    return e_th_g, e_th_b, e_st_g, e_st_b


def fuse_affine(
    mask: torch.Tensor,
    e_th_gamma: torch.Tensor,
    e_th_beta: torch.Tensor,
    e_st_gamma: torch.Tensor,
    e_st_beta: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gate thing vs stuff embeddings with the foreground mask.

    mask: (H, W); embeddings: (C, H, W). Where mask is 0 the result is the
    stuff embedding exactly (bitwise), and the thing embedding where 1.
    """
    m = mask.unsqueeze(0)
    gamma = torch.where(m > 0, e_th_gamma, e_st_gamma)
    beta = torch.where(m > 0, e_th_beta, e_st_beta)
    return gamma, beta


def batch_norm_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean and (biased) variance over (B, H, W); x is BCHW."""
    mean = x.mean(dim=(0, 2, 3))
    var = x.var(dim=(0, 2, 3), unbiased=False)
    return mean, var


def isa_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float = 1e-5,
    stats: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Normalize BCHW features with batch statistics (or supplied running
    statistics) and modulate with per-pixel (gamma, beta) of shape
    (B, C, H, W) or broadcastable."""
    mean, var = stats if stats is not None else batch_norm_stats(x)
    x_hat = (x - mean.reshape(1, -1, 1, 1)) / torch.sqrt(var.reshape(1, -1, 1, 1) + eps)
    return x_hat * gamma + beta


class IsaNorm(nn.Module):
    """Stateful wrapper tracking running statistics for inference."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        if self.training:
            mean, var = batch_norm_stats(x)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean.detach())
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var.detach())
            return isa_norm(x, gamma, beta, self.eps, stats=(mean, var))
        stats = (self.running_mean.to(x.dtype), self.running_var.to(x.dtype))
        return isa_norm(x, gamma, beta, self.eps, stats=stats)
