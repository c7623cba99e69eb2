"""Layout-to-image generator: a fully connected stem mapping the image
latent to a 4x4 tensor, followed by upsampling residual blocks that each
blend the panoptic layout into the features through isa-norm, then a tanh
RGB head.

Layout conditioning is resampled to every block's working resolution:
area averaging when shrinking (preserves soft-mask mass), bilinear when
growing. Three layout modes are supported: "panoptic" (default),
"stuff_only" (foreground mask forced to zero) and "instance_only"
(background embedding in place of the stuff projection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import LatentDimMismatch, ShapeMismatch
from .layout import InstanceLayout, StuffLayout
from .norm import EMBED_EPS, EmbeddingTables, GuidedFilter, IsaNorm

LAYOUT_MODES = ("panoptic", "stuff_only", "instance_only")


@dataclass
class _Prepared:
    """Batched per-block layout conditioning shared by both norms."""

    mask: torch.Tensor          # (B, size, size) foreground indicator
    refined: torch.Tensor | None  # (B, n_max, size, size) padded refined masks
    denom: torch.Tensor | None    # (B, 1, size, size) raw mass + eps
    sample_idx: torch.Tensor    # (N,) owning bundle per mask slice
    pos_idx: torch.Tensor       # (N,) slot within the owning bundle
    thing_rows: torch.Tensor    # (N,) embedding-table row per mask slice
    stuff: torch.Tensor | None  # (B, S, size, size) or None
    missing_stuff: list[int]    # bundles without a stuff layout


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 128
    stages: int = 4  # output side = 4 * 2**stages (4 -> 64^2, 5 -> 128^2)
    widths: tuple[int, ...] | None = None  # per-stage output widths
    stem_width: int = 128
    tau: float = 0.1

    @property
    def output_size(self) -> int:
        return 4 * 2 ** self.stages

    def stage_widths(self) -> tuple[int, ...]:
        if self.widths is not None:
            if len(self.widths) != self.stages:
                raise ShapeMismatch(
                    f"{len(self.widths)} widths for {self.stages} stages"
                )
            return self.widths
        # widths halve as resolution doubles, floored at 16
        return tuple(max(self.stem_width >> (i + 1), 16) for i in range(self.stages))


def _resample(stack: torch.Tensor, size: int) -> torch.Tensor:
    """Resample a (K, H, W) stack to (K, size, size)."""
    if stack.shape[0] == 0:
        return stack.new_zeros(0, size, size)
    if stack.shape[1] == size:
        return stack
    mode = "area" if size < stack.shape[1] else "bilinear"
    kwargs = {} if mode == "area" else {"align_corners": False}
    return F.interpolate(stack.unsqueeze(0), size=(size, size), mode=mode, **kwargs)[0]


@dataclass
class LayoutBundle:
    """Per-sample conditioning passed through the generator."""

    stuff: StuffLayout | None
    instances: InstanceLayout
    thing_channels: tuple[int, ...]  # embedding row per instance slice


class IsaResBlock(nn.Module):
    """Upsampling residual block: two isa-norm -> relu -> conv stages with
    a learned skip when the channel count changes."""

    def __init__(self, in_ch: int, out_ch: int, num_stuff: int, num_things: int):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.norm1 = IsaNorm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = IsaNorm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.tables1 = EmbeddingTables(num_stuff, num_things, in_ch)
        self.tables2 = EmbeddingTables(num_stuff, num_things, out_ch)
        self.guided_filter = GuidedFilter(in_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else None

    def _prepare(
        self,
        bundles: Sequence[LayoutBundle],
        features: torch.Tensor,
        size: int,
        tau: float,
        mode: str,
        use_gf: bool,
    ) -> _Prepared:
        """Batched layout conditioning at this block's scale.

        Instance masks from all bundles are concatenated so the guided
        filter, box statistics and embedding projections each run once per
        block; both norms in the block share the refined masks."""
        B = len(bundles)
        raws, owner, pos, rows = [], [], [], []
        for b, bundle in enumerate(bundles):
            raw = _resample(bundle.instances.masks, size)
            if mode != "stuff_only" and raw.shape[0] > 0:
                raws.append(raw)
                owner += [b] * raw.shape[0]
                pos += list(range(raw.shape[0]))
                rows += list(bundle.thing_channels)
        sample_idx = torch.as_tensor(owner, dtype=torch.long)
        pos_idx = torch.as_tensor(pos, dtype=torch.long)
        thing_rows = torch.as_tensor(rows, dtype=torch.long)

        refined = denom = None
        if raws:
            raw_cat = torch.cat(raws)
            refined_cat = raw_cat
            if use_gf:
                refined_cat = self.guided_filter.refine_batch(
                    raw_cat, features, sample_idx
                )
            n_max = max(pos) + 1
            raw_pad = features.new_zeros(B, n_max, size, size)
            raw_pad[sample_idx, pos_idx] = raw_cat
            refined = features.new_zeros(B, n_max, size, size)
            refined[sample_idx, pos_idx] = refined_cat
            mass = raw_pad.sum(dim=1, keepdim=True)
            denom = mass + EMBED_EPS
            mask = (mass[:, 0] > tau).to(features.dtype).detach()
        else:
            mask = features.new_zeros(B, size, size)

        stuff = None
        missing_stuff = list(range(B))
        if mode != "instance_only":
            stacks, missing_stuff = [], []
            for b, bundle in enumerate(bundles):
                if bundle.stuff is not None:
                    stacks.append(_resample(bundle.stuff.masks, size))
                else:
                    missing_stuff.append(b)
                    stacks.append(None)
            if len(missing_stuff) < B:
                zero = next(s for s in stacks if s is not None)
                stuff = torch.stack(
                    [s if s is not None else torch.zeros_like(zero) for s in stacks]
                )
        return _Prepared(
            mask, refined, denom, sample_idx, pos_idx, thing_rows, stuff, missing_stuff
        )

    def _affine(
        self,
        tables: EmbeddingTables,
        bundles: Sequence[LayoutBundle],
        prepared: _Prepared,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        B = len(bundles)
        size = prepared.mask.shape[-1]
        C = tables.channels
        dtype = prepared.mask.dtype

        if prepared.refined is not None:
            gb = torch.cat([tables.thing_gamma, tables.thing_beta], dim=1)
            rows = prepared.refined.new_zeros(
                B, prepared.refined.shape[1], 2 * C
            )
            rows[prepared.sample_idx, prepared.pos_idx] = gb[prepared.thing_rows]
            num = torch.einsum("bnhw,bnc->bchw", prepared.refined, rows)
            e_th_g, e_th_b = (num / prepared.denom).split(C, dim=1)
        else:
            e_th_g = torch.zeros(B, C, size, size, dtype=dtype)
            e_th_b = torch.zeros_like(e_th_g)

        if prepared.stuff is not None:
            st = torch.cat([tables.stuff_gamma, tables.stuff_beta], dim=1)
            e_st_g, e_st_b = torch.einsum(
                "bshw,sc->bchw", prepared.stuff, st
            ).split(C, dim=1)
        else:
            e_st_g = tables.background_gamma[0].reshape(1, C, 1, 1).expand(
                B, C, size, size
            )
            e_st_b = tables.background_beta[0].reshape(1, C, 1, 1).expand(
                B, C, size, size
            )
        if prepared.stuff is not None and prepared.missing_stuff:
            bg_g = tables.background_gamma[0].reshape(C, 1, 1).expand(C, size, size)
            bg_b = tables.background_beta[0].reshape(C, 1, 1).expand(C, size, size)
            e_st_g = e_st_g.clone()
            e_st_b = e_st_b.clone()
            for b in prepared.missing_stuff:
                e_st_g[b] = bg_g
                e_st_b[b] = bg_b

        m = prepared.mask.unsqueeze(1)
        gamma = torch.where(m > 0, e_th_g, e_st_g)
        beta = torch.where(m > 0, e_th_b, e_st_b)
        return gamma, beta

    def forward(
        self,
        x: torch.Tensor,
        bundles: Sequence[LayoutBundle],
        tau: float,
        mode: str,
        use_gf: bool,
    ) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        size = x.shape[-1]
        prepared = self._prepare(bundles, x, size, tau, mode, use_gf)
        gamma, beta = self._affine(self.tables1, bundles, prepared)
        h = self.conv1(F.relu(self.norm1(x, gamma, beta)))
        gamma, beta = self._affine(self.tables2, bundles, prepared)
        h = self.conv2(F.relu(self.norm2(h, gamma, beta)))
        skip = self.skip(x) if self.skip is not None else x
        return skip + h


class ImageGenerator(nn.Module):
    def __init__(self, num_stuff: int, num_things: int, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        widths = cfg.stage_widths()
        self.fc = nn.Linear(cfg.latent_dim, cfg.stem_width * 4 * 4)
        blocks = []
        in_ch = cfg.stem_width
        for w in widths:
            blocks.append(IsaResBlock(in_ch, w, num_stuff, num_things))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(in_ch, 3, 3, padding=1)

    def forward(
        self,
        bundles: Sequence[LayoutBundle],
        z: torch.Tensor,
        mode: str = "panoptic",
        use_guided_filter: bool = True,
    ) -> torch.Tensor:
        """bundles: one LayoutBundle per batch element; z: (B, latent_dim).
        Returns images (B, 3, H, W) in [-1, 1]."""
        if mode not in LAYOUT_MODES:
            raise ShapeMismatch(f"unknown layout mode {mode!r}")
        if z.dim() != 2 or z.shape[0] != len(bundles):
            raise ShapeMismatch(f"latent batch {tuple(z.shape)} vs {len(bundles)} bundles")
        if z.shape[1] != self.config.latent_dim:
            raise LatentDimMismatch(
                f"latent dim {z.shape[1]}, generator expects {self.config.latent_dim}"
            )
        x = self.fc(z).reshape(len(bundles), self.config.stem_width, 4, 4)
        for block in self.blocks:
            x = block(x, bundles, self.config.tau, mode, use_guided_filter)
        return torch.tanh(self.to_rgb(F.relu(x)))
