"""Discriminators for the adversarial objectives: whole-image scoring,
label-conditioned object-crop scoring, and Gram-matrix appearance scoring
conditioned on a global image feature. All weights carry spectral
normalization.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils import spectral_norm

from .layout import BBox

DEFAULT_CROP = 32


def _sn_conv(in_ch: int, out_ch: int, stride: int = 2) -> nn.Module:
    return spectral_norm(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1))


def crop_objects(
    images: torch.Tensor,
    boxes: Sequence[Sequence[BBox]],
    crop_size: int = DEFAULT_CROP,
) -> torch.Tensor:
    """Crop each bbox region of a (B, C, H, W) batch and resize to a fixed
    square; `boxes` holds one list per batch element. Returns (N, C, s, s)."""
    crops = []
    _, _, H, W = images.shape
    for b, per_image in enumerate(boxes):
        for box in per_image:
            y0, x0, rh, rw = box.pixel_rect(H, W)
            cy0, cx0 = max(y0, 0), max(x0, 0)
            cy1, cx1 = min(y0 + rh, H), min(x0 + rw, W)
            if cy1 <= cy0 or cx1 <= cx0:
                cy0, cx0, cy1, cx1 = 0, 0, 1, 1
            region = images[b: b + 1, :, cy0:cy1, cx0:cx1]
            crops.append(
                F.interpolate(region, size=(crop_size, crop_size),
                              mode="bilinear", align_corners=False)
            )
    if not crops:
        return images.new_zeros(0, images.shape[1], crop_size, crop_size)
    return torch.cat(crops, dim=0)


class ImageDiscriminator(nn.Module):
    def __init__(self, width: int = 32):
        super().__init__()
        self.trunk = nn.Sequential(
            _sn_conv(3, width), nn.LeakyReLU(0.2),
            _sn_conv(width, width * 2), nn.LeakyReLU(0.2),
            _sn_conv(width * 2, width * 4), nn.LeakyReLU(0.2),
        )
        self.head = spectral_norm(nn.Linear(width * 4, 1))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h = self.trunk(images).sum(dim=(2, 3))
        return self.head(h).squeeze(-1)


class ObjectDiscriminator(nn.Module):
    """Projection discriminator over fixed-size object crops."""

    def __init__(self, num_things: int, width: int = 32, crop_size: int = DEFAULT_CROP):
        super().__init__()
        self.crop_size = crop_size
        self.trunk = nn.Sequential(
            _sn_conv(3, width), nn.LeakyReLU(0.2),
            _sn_conv(width, width * 2), nn.LeakyReLU(0.2),
            _sn_conv(width * 2, width * 4), nn.LeakyReLU(0.2),
        )
        feat = width * 4
        self.head = spectral_norm(nn.Linear(feat, 1))
        self.embed = spectral_norm(nn.Embedding(max(num_things, 1), feat))

    def forward(self, crops: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if crops.shape[0] == 0:
            return crops.new_zeros(0)
        h = self.trunk(crops).sum(dim=(2, 3))
        proj = (self.embed(labels) * h).sum(dim=1)
        return self.head(h).squeeze(-1) + proj


class AppearanceDiscriminator(nn.Module):
    """Scores the Gram matrix of per-object trunk features, conditioned on
    a global feature of the full image."""

    def __init__(self, width: int = 16, crop_size: int = DEFAULT_CROP):
        super().__init__()
        self.crop_size = crop_size
        self.feat_ch = width * 2
        self.trunk = nn.Sequential(
            _sn_conv(3, width), nn.LeakyReLU(0.2),
            _sn_conv(width, self.feat_ch), nn.LeakyReLU(0.2),
        )
        gram_dim = self.feat_ch * self.feat_ch
        self.gram_head = nn.Sequential(
            spectral_norm(nn.Linear(gram_dim, 128)), nn.LeakyReLU(0.2),
            spectral_norm(nn.Linear(128, 1)),
        )
        self.cond_proj = spectral_norm(nn.Linear(self.feat_ch, 128))
        self.hidden = spectral_norm(nn.Linear(gram_dim, 128))

    def object_features(self, images: torch.Tensor, boxes) -> torch.Tensor:
        """Per-object feature crops (N, C, s, s) from the trunk."""
        feats = self.trunk(images)
        scale = feats.shape[-1] / images.shape[-1]
        crops = []
        _, _, H, W = feats.shape
        for b, per_image in enumerate(boxes):
            for box in per_image:
                y0, x0, rh, rw = box.pixel_rect(H, W)
                cy0, cx0 = max(y0, 0), max(x0, 0)
                cy1, cx1 = min(y0 + rh, H), min(x0 + rw, W)
                if cy1 <= cy0 or cx1 <= cx0:
                    cy0, cx0, cy1, cx1 = 0, 0, 1, 1
                region = feats[b: b + 1, :, cy0:cy1, cx0:cx1]
                crops.append(F.interpolate(region, size=(8, 8),
                                           mode="bilinear", align_corners=False))
        if not crops:
            return feats.new_zeros(0, self.feat_ch, 8, 8)
        return torch.cat(crops, dim=0)

    def gram_scores(self, grams: torch.Tensor, image_feature: torch.Tensor) -> torch.Tensor:
        """grams: (N, C, C); image_feature: (N, C) pooled trunk feature of
        the source image, repeated per object."""
        if grams.shape[0] == 0:
            return grams.new_zeros(0)
        flat = grams.reshape(grams.shape[0], -1)
        hidden = self.hidden(flat)
        cond = (self.cond_proj(image_feature) * hidden).sum(dim=1)
        return self.gram_head(flat).squeeze(-1) + cond

    def global_feature(self, images: torch.Tensor) -> torch.Tensor:
        return self.trunk(images).mean(dim=(2, 3))


class RandomFeatureExtractor(nn.Module):
    """Frozen, seeded convolutional stand-in for a pretrained perceptual
    network: five stride-2 stages exposing their activations, with the
    conventional shallow-to-deep layer weights."""

    layer_weights = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

    def __init__(self, seed: int = 0, width: int = 16):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        in_ch = 3
        for _ in range(5):
            conv = nn.Conv2d(in_ch, width, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.zero_()
            self.stages.append(conv)
            in_ch = width
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = images
        for stage in self.stages:
            x = F.leaky_relu(stage(x), 0.2)
            feats.append(x)
        return feats
