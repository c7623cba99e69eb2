"""Panoptic layout construction: the stuff and instance branches.

Instance branch: per-thing bounding-box and mask prediction plus the
resize-and-place step that composes per-object masks into a canvas-sized
instance layout. Stuff branch: coarse square masks refined by a small
conditional network and normalized with a masked softmax over the input
stuff categories.

Layout tensors are channel-first: (K, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import (
    EmptyActiveSet,
    LengthMismatch,
    ShapeMismatch,
    StuffObjectPassed,
    ThingObjectPassed,
)
from .scene import CategoryTaxonomy, ObjectSpec, side_fraction, STUFF, THING


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    h: float
    w: float

    def pixel_rect(self, H: int, W: int) -> tuple[int, int, int, int]:
        """(y0, x0, rh, rw) before clipping; extent at least 1x1."""
        rh = max(int(round(self.h * H)), 1)
        rw = max(int(round(self.w * W)), 1)
        y0 = int(round(self.cy * H - rh / 2))
        x0 = int(round(self.cx * W - rw / 2))
        return y0, x0, rh, rw


@dataclass
class InstanceLayout:
    masks: torch.Tensor  # (n, H, W), values in [0, 1]
    categories: tuple[int, ...] = ()
    bboxes: tuple[BBox, ...] = ()

    @property
    def count(self) -> int:
        return int(self.masks.shape[0])

    @property
    def canvas(self) -> tuple[int, int]:
        return int(self.masks.shape[1]), int(self.masks.shape[2])


@dataclass
class StuffLayout:
    masks: torch.Tensor  # (|C^St|, H, W), simplex over active channels
    active: tuple[int, ...]  # channel indices within the stuff stack

    @property
    def canvas(self) -> tuple[int, int]:
        return int(self.masks.shape[1]), int(self.masks.shape[2])


@dataclass
class CoarseStuffLayout:
    masks: torch.Tensor  # (|C^St|, H, W), binary
    active: tuple[int, ...]


def empty_instance_layout(H: int, W: int, **tensor_kwargs) -> InstanceLayout:
    return InstanceLayout(masks=torch.zeros(0, H, W, **tensor_kwargs))


def mask2layout(
    bboxes: Sequence[BBox],
    masks: Sequence[torch.Tensor],
    H: int,
    W: int,
) -> InstanceLayout:
    """Resize each base-resolution mask into its bbox pixel rectangle.

    Bilinear resampling; pixels outside the (clipped) rectangle are zero.
    """
    if len(bboxes) != len(masks):
        raise LengthMismatch(f"{len(bboxes)} boxes vs {len(masks)} masks")
    if not masks:
        return empty_instance_layout(H, W)
    dtype = masks[0].dtype
    out = torch.zeros(len(masks), H, W, dtype=dtype)
    for i, (bbox, mask) in enumerate(zip(bboxes, masks)):
        y0, x0, rh, rw = bbox.pixel_rect(H, W)
        resized = F.interpolate(
            mask.reshape(1, 1, *mask.shape), size=(rh, rw),
            mode="bilinear", align_corners=False,
        )[0, 0]
        cy0, cx0 = max(y0, 0), max(x0, 0)
        cy1, cx1 = min(y0 + rh, H), min(x0 + rw, W)
        if cy1 <= cy0 or cx1 <= cx0:
            continue
        out[i, cy0:cy1, cx0:cx1] = resized[cy0 - y0: cy1 - y0, cx0 - x0: cx1 - x0]
    return InstanceLayout(masks=out, bboxes=tuple(bboxes))


def build_coarse_stuff_layout(
    stuff_objs: Sequence[ObjectSpec],
    taxonomy: CategoryTaxonomy,
    H: int,
    W: int,
    size_max: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> CoarseStuffLayout:
    """Binary square per stuff object, OR-ed into its category channel."""
    size_max = size_max if size_max is not None else 25
    masks = torch.zeros(taxonomy.num_stuff, H, W, dtype=dtype)
    active: list[int] = []
    for obj in stuff_objs:
        if taxonomy.kind_of(obj.category) != STUFF:
            raise ThingObjectPassed(f"object with category {obj.category} is a thing")
        side = int(round(side_fraction(obj.size, size_max) * min(H, W)))
        side = max(side, 1)
        y0 = int(round(obj.cy * H - side / 2))
        x0 = int(round(obj.cx * W - side / 2))
        cy0, cx0 = max(y0, 0), max(x0, 0)
        cy1, cx1 = min(y0 + side, H), min(x0 + side, W)
        ch = taxonomy.stuff_channel(obj.category)
        if cy1 > cy0 and cx1 > cx0:
            masks[ch, cy0:cy1, cx0:cx1] = 1.0
        if ch not in active:
            active.append(ch)
    return CoarseStuffLayout(masks=masks, active=tuple(sorted(active)))


def masked_softmax(logits: torch.Tensor, active: Sequence[int]) -> StuffLayout:
    """Per-pixel softmax over the active stuff channels; inactive channels
    are exactly zero. Stabilized by max-subtraction over the active set."""
    if len(active) == 0:
        raise EmptyActiveSet("masked softmax needs a nonempty active set")
    active = tuple(active)
    sel = logits[list(active)]  # (|active|, H, W)
    sel = sel - sel.max(dim=0, keepdim=True).values
    exp = torch.exp(sel)
    probs = exp / exp.sum(dim=0, keepdim=True)
    out = torch.zeros_like(logits)
    out[list(active)] = probs
    return StuffLayout(masks=out, active=active)


# --- learned components ---


class _ConditionEncoder(nn.Module):
    """Shared conditioning vectors for the instance branch:
    [label embedding, center, normalized size, latent] per object."""

    def __init__(self, num_things: int, embed_dim: int, latent_dim: int, size_max: int):
        super().__init__()
        self.embedding = nn.Embedding(num_things, embed_dim)
        self.size_max = size_max
        self.out_dim = embed_dim + 3 + latent_dim

    def forward(
        self,
        thing_channels: Sequence[int],
        objs: Sequence[ObjectSpec],
        zs: torch.Tensor,
    ) -> torch.Tensor:
        """thing_channels/objs of length N, zs (N, m) -> (N, out_dim)."""
        idx = torch.as_tensor(list(thing_channels), dtype=torch.long)
        emb = self.embedding(idx)
        geo = torch.tensor(
            [[o.cx, o.cy, o.size / self.size_max] for o in objs], dtype=emb.dtype
        )
        return torch.cat([emb, geo, zs.to(emb.dtype)], dim=1)


class BBoxPredictor(nn.Module):
    def __init__(self, cond_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(cond_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 2),
        )

    def forward(self, cond: torch.Tensor) -> torch.Tensor:
        """(N, cond_dim) -> (N, 2) squashed box extents."""
        return torch.sigmoid(self.net(cond))


class MaskPredictor(nn.Module):
    """FC seed at 4x4 upsampled to the base mask resolution M."""

    def __init__(self, cond_dim: int, mask_size: int = 16, width: int = 32):
        super().__init__()
        if mask_size < 4 or mask_size & (mask_size - 1):
            raise ShapeMismatch("base mask resolution must be a power of two >= 4")
        self.mask_size = mask_size
        self.width = width
        self.fc = nn.Linear(cond_dim, width * 4 * 4)
        ups = []
        for _ in range(int(math.log2(mask_size // 4))):
            ups += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(width, width, 3, padding=1), nn.ReLU()]
        self.ups = nn.Sequential(*ups)
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, cond: torch.Tensor) -> torch.Tensor:
        """(N, cond_dim) -> (N, M, M) soft masks."""
        x = self.fc(cond).reshape(-1, self.width, 4, 4)
        x = self.ups(x)
        return torch.sigmoid(self.head(x))[:, 0]


class _RefineBlock(nn.Module):
    """Upsampling residual block conditioned on the resized coarse layout."""

    def __init__(self, width: int, cond_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width + cond_channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        h = torch.cat([x, cond], dim=1)
        h = F.relu(self.conv1(h))
        h = self.conv2(h)
        return F.relu(x + h)


class StuffRefiner(nn.Module):
    """Refines the coarse square layout into per-category logits.

    A latent-seeded 4x4 feature map is upsampled through residual blocks,
    each conditioned on the coarse layout resampled to its resolution.
    The default 64x64 canvas uses four blocks (4 -> 64).
    """

    def __init__(self, num_stuff: int, latent_dim: int, width: int = 32):
        super().__init__()
        self.num_stuff = num_stuff
        self.latent_dim = latent_dim
        self.width = width
        self.fc = nn.Linear(latent_dim + num_stuff, width * 4 * 4)
        # enough blocks for 256^2; forward uses as many as the canvas needs
        self.blocks = nn.ModuleList(
            _RefineBlock(width, num_stuff) for _ in range(6)
        )
        self.head = nn.Conv2d(width, num_stuff, 3, padding=1)

    def forward(self, coarse: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """coarse (B, |C^St|, H, W), z (B, m) -> logits (B, |C^St|, H, W)."""
        B, C, H, W = coarse.shape
        if C != self.num_stuff:
            raise ShapeMismatch(f"coarse layout has {C} channels, expected {self.num_stuff}")
        n_up = int(math.log2(min(H, W) // 4))
        if 4 * 2 ** n_up != H or H != W:
            raise ShapeMismatch(f"canvas {H}x{W} must be square 4*2^k")
        if n_up > len(self.blocks):
            raise ShapeMismatch(f"canvas {H} exceeds supported resolution")
        seed = torch.cat([z, F.adaptive_avg_pool2d(coarse, 1).reshape(B, -1)], dim=1)
        x = self.fc(seed).reshape(B, self.width, 4, 4)
        for k in range(n_up):
            res = 4 * 2 ** (k + 1)
            cond = F.interpolate(coarse, size=(res, res), mode="nearest")
            x = self.blocks[k](x, cond)
        return self.head(x)


@dataclass
class LayoutConfig:
    latent_dim: int = 128
    label_embed_dim: int = 64
    mask_size: int = 16
    size_max: int = 25


class PanopticLayoutGenerator(nn.Module):
    """Both layout branches plus their label-embedding conditioning."""

    def __init__(self, taxonomy: CategoryTaxonomy, config: LayoutConfig | None = None):
        super().__init__()
        self.taxonomy = taxonomy
        self.config = config or LayoutConfig()
        cfg = self.config
        num_things = max(taxonomy.num_things, 1)
        self.cond = _ConditionEncoder(
            num_things, cfg.label_embed_dim, cfg.latent_dim, cfg.size_max
        )
        self.bbox_predictor = BBoxPredictor(self.cond.out_dim)
        self.mask_predictor = MaskPredictor(self.cond.out_dim, cfg.mask_size)
        self.stuff_refiner = StuffRefiner(taxonomy.num_stuff, cfg.latent_dim)

    def _check_thing(self, obj: ObjectSpec):
        if self.taxonomy.kind_of(obj.category) != THING:
            raise StuffObjectPassed(f"category {obj.category} is stuff")

    def _cond(self, objs: Sequence[ObjectSpec], zs: torch.Tensor) -> torch.Tensor:
        for obj in objs:
            self._check_thing(obj)
        channels = [self.taxonomy.thing_channel(o.category) for o in objs]
        return self.cond(channels, objs, zs)

    def predict_bbox_hw_batch(
        self, objs: Sequence[ObjectSpec], zs: torch.Tensor
    ) -> torch.Tensor:
        """Differentiable (N, 2) box extents, for the regression loss."""
        return self.bbox_predictor(self._cond(objs, zs))

    def predict_mask_batch(
        self, objs: Sequence[ObjectSpec], zs: torch.Tensor
    ) -> torch.Tensor:
        """(N, M, M) soft masks at the base mask resolution."""
        return self.mask_predictor(self._cond(objs, zs))

    def predict_bbox(self, obj: ObjectSpec, z: torch.Tensor) -> BBox:
        """Center is copied from the object; only (h, w) are predicted."""
        hw = self.predict_bbox_hw(obj, z).detach()
        return BBox(cx=obj.cx, cy=obj.cy, h=float(hw[0]), w=float(hw[1]))

    def predict_bbox_hw(self, obj: ObjectSpec, z: torch.Tensor) -> torch.Tensor:
        return self.predict_bbox_hw_batch([obj], z.reshape(1, -1))[0]

    def predict_mask(self, obj: ObjectSpec, z: torch.Tensor) -> torch.Tensor:
        return self.predict_mask_batch([obj], z.reshape(1, -1))[0]

    def refine_stuff_layout(self, coarse: CoarseStuffLayout, z: torch.Tensor) -> torch.Tensor:
        """Raw (unnormalized) stuff logits at canvas resolution."""
        return self.stuff_refiner(coarse.masks.unsqueeze(0), z.reshape(1, -1))[0]

    def instance_layout(
        self,
        things: Sequence[ObjectSpec],
        latents: Sequence[torch.Tensor],
        H: int,
        W: int,
        boxes: Sequence[BBox] | None = None,
    ) -> InstanceLayout:
        """Predict boxes (unless supplied) and masks, then compose."""
        zs = torch.stack([z.reshape(-1) for z in latents]) if things else None
        if boxes is None:
            hw = self.predict_bbox_hw_batch(things, zs).detach()
            boxes = [
                BBox(cx=o.cx, cy=o.cy, h=float(hw[i, 0]), w=float(hw[i, 1]))
                for i, o in enumerate(things)
            ]
        masks = list(self.predict_mask_batch(things, zs)) if things else []
        layout = mask2layout(list(boxes), masks, H, W)
        layout.categories = tuple(o.category for o in things)
        return layout

    def stuff_layout(
        self,
        stuff_objs: Sequence[ObjectSpec],
        z: torch.Tensor,
        H: int,
        W: int,
    ) -> StuffLayout:
        coarse = build_coarse_stuff_layout(
            stuff_objs, self.taxonomy, H, W, size_max=self.config.size_max,
            dtype=z.dtype,
        )
        logits = self.refine_stuff_layout(coarse, z)
        return masked_softmax(logits, coarse.active)
