"""Adversarial training loop: alternating discriminator and generator
updates over annotated batches, with Adam at the configured learning rate
and full checkpoint/restore of the optimization state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import AnnotatedSample, sample_to_scene
from .discriminators import (
    AppearanceDiscriminator,
    ImageDiscriminator,
    ObjectDiscriminator,
    RandomFeatureExtractor,
    crop_objects,
)
from .errors import NonFiniteLoss
from .generator import LayoutBundle
from .layout import (
    BBox,
    build_coarse_stuff_layout,
    empty_instance_layout,
    mask2layout,
    masked_softmax,
)
from .losses import (
    LossParts,
    LossWeights,
    gram_matrix,
    hinge_disc_loss,
    hinge_gen_loss,
    perceptual_loss,
    reconstruction_loss,
    total_generator_loss,
)
from .pipeline import SynthesisModel
from .scene import split_objects, THING

LOG_FIELDS = (
    "step", "loss_box", "loss_img", "loss_obj", "loss_per", "loss_rec",
    "loss_app", "loss_total", "disc_img", "disc_obj", "disc_app",
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.0, 0.999)
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    crop_size: int = 32


def object_losses(
    images: torch.Tensor,
    boxes: Sequence[Sequence[BBox]],
    labels: Sequence[Sequence[int]],
    d_obj: ObjectDiscriminator,
    crop_size: int = 32,
) -> torch.Tensor:
    """Scores of label-conditioned crops; empty boxes give an empty vector."""
    crops = crop_objects(images, boxes, crop_size)
    flat_labels = torch.as_tensor(
        [l for per in labels for l in per], dtype=torch.long
    )
    return d_obj(crops, flat_labels)


def appearance_scores(
    images: torch.Tensor,
    boxes: Sequence[Sequence[BBox]],
    d_app: AppearanceDiscriminator,
) -> torch.Tensor:
    """Gram-matrix scores of per-object trunk features, conditioned on the
    pooled feature of the source image."""
    feats = d_app.object_features(images, boxes)
    if feats.shape[0] == 0:
        return feats.new_zeros(0)
    grams = torch.stack([gram_matrix(f) for f in feats])
    global_feat = d_app.global_feature(images)
    repeats = torch.as_tensor([len(per) for per in boxes])
    cond = global_feat.repeat_interleave(repeats, dim=0)
    return d_app.gram_scores(grams, cond)


class Trainer:
    """Owns all mutable parameters; one controller per training run."""

    def __init__(
        self,
        model: SynthesisModel,
        config: TrainConfig | None = None,
        feature_extractor: nn.Module | None = None,
    ):
        self.model = model
        self.config = config or TrainConfig()
        tax = model.taxonomy
        self.d_img = ImageDiscriminator()
        self.d_obj = ObjectDiscriminator(tax.num_things, crop_size=self.config.crop_size)
        self.d_app = AppearanceDiscriminator()
        self.extractor = feature_extractor or RandomFeatureExtractor(seed=self.config.seed)
        self.gen_params = list(model.plg.parameters()) + list(model.generator.parameters())
        self.disc_params = (
            list(self.d_img.parameters())
            + list(self.d_obj.parameters())
            + list(self.d_app.parameters())
        )
        self.opt_g = torch.optim.Adam(self.gen_params, lr=self.config.lr, betas=self.config.betas)
        self.opt_d = torch.optim.Adam(self.disc_params, lr=self.config.lr, betas=self.config.betas)
        self.step = 0
        self.rng = torch.Generator().manual_seed(self.config.seed)

    # --- batch preparation ---

    def _prepare(self, batch: Sequence[AnnotatedSample]):
        """Derive scenes, latents, predicted layouts and ground-truth
        supervision for one batch."""
        model = self.model
        tax = model.taxonomy
        m = model.layout_config.latent_dim
        gt_boxes, labels = [], []
        box_targets = []

        # pass 1: validate, split, draw latents, collect ground truth
        per_sample = []
        all_things, all_thing_zs = [], []
        for sample in batch:
            scene = sample_to_scene(sample, size_max=model.layout_config.size_max)
            vscene = model.validate(scene)
            stuff_objs, things = split_objects(vscene)
            H, W = scene.height, scene.width

            z_st = torch.randn(m, generator=self.rng)
            thing_anns = [o for o in sample.objects if tax.kind_of(o.category) == THING]
            if not things or model.mode == "stuff_only":
                things = []
            for obj, ann in zip(things, thing_anns):
                all_things.append(obj)
                all_thing_zs.append(torch.randn(m, generator=self.rng))
                box_targets.append(torch.tensor([ann.bbox[2], ann.bbox[3]]))
            per_sample.append((stuff_objs, things, z_st, H, W))
            gt_boxes.append([BBox(*ann.bbox) for ann in thing_anns])
            labels.append([tax.thing_channel(ann.category) for ann in thing_anns])

        # stuff branch: refine all coarse layouts with stuff in one forward
        stuff_layouts: list = [None] * len(batch)
        if model.mode != "instance_only":
            groups: dict[tuple[int, int], list[int]] = {}
            for i, (stuff_objs, _, _, H, W) in enumerate(per_sample):
                if stuff_objs:
                    groups.setdefault((H, W), []).append(i)
            for (H, W), idxs in groups.items():
                coarses, actives = [], []
                for i in idxs:
                    c = build_coarse_stuff_layout(
                        per_sample[i][0], tax, H, W,
                        size_max=model.layout_config.size_max,
                    )
                    coarses.append(c.masks)
                    actives.append(c.active)
                logits = model.plg.stuff_refiner(
                    torch.stack(coarses),
                    torch.stack([per_sample[i][2] for i in idxs]),
                )
                for j, i in enumerate(idxs):
                    stuff_layouts[i] = masked_softmax(logits[j], actives[j])

        # instance branch: predict boxes and masks for every thing at once
        if all_things:
            z_stack = torch.stack(all_thing_zs)
            hw_all = model.plg.predict_bbox_hw_batch(all_things, z_stack)
            masks_all = model.plg.predict_mask_batch(all_things, z_stack)
            hw_d = hw_all.detach()
            box_preds = list(hw_all)
        else:
            box_preds = []

        bundles, pred_boxes = [], []
        cursor = 0
        for i, (stuff_objs, things, _, H, W) in enumerate(per_sample):
            boxes, masks, chans = [], [], []
            for obj in things:
                boxes.append(BBox(obj.cx, obj.cy,
                                  float(hw_d[cursor, 0]), float(hw_d[cursor, 1])))
                masks.append(masks_all[cursor])
                chans.append(tax.thing_channel(obj.category))
                cursor += 1
            if boxes:
                instances = mask2layout(boxes, masks, H, W)
            else:
                instances = empty_instance_layout(H, W)
            bundles.append(LayoutBundle(stuff=stuff_layouts[i], instances=instances,
                                        thing_channels=tuple(chans)))
            pred_boxes.append(boxes)

        real = torch.stack([
            torch.from_numpy(s.image).permute(2, 0, 1) for s in batch
        ])
        z_im = torch.randn(len(batch), model.generator_config.latent_dim, generator=self.rng)
        return bundles, real, z_im, gt_boxes, pred_boxes, labels, box_preds, box_targets

    # --- one optimization step ---

    def train_step(self, batch: Sequence[AnnotatedSample]) -> dict[str, float]:
        if not batch:
            raise ValueError("batch must be nonempty")
        cfg = self.config
        model = self.model
        model.plg.train()
        model.generator.train()

        (bundles, real, z_im, gt_boxes, pred_boxes, labels,
         box_preds, box_targets) = self._prepare(batch)
        fake = model.generator(
            bundles, z_im, mode=model.mode, use_guided_filter=model.use_guided_filter
        )

        # discriminator update
        fake_d = fake.detach()
        d_img_loss = hinge_disc_loss(self.d_img(real), self.d_img(fake_d))
        d_obj_loss = hinge_disc_loss(
            object_losses(real, gt_boxes, labels, self.d_obj, cfg.crop_size),
            object_losses(fake_d, pred_boxes, labels, self.d_obj, cfg.crop_size),
        )
        d_app_loss = hinge_disc_loss(
            appearance_scores(real, gt_boxes, self.d_app),
            appearance_scores(fake_d, pred_boxes, self.d_app),
        )
        d_total = d_img_loss + d_obj_loss + d_app_loss
        self.opt_d.zero_grad()
        d_total.backward()
        self.opt_d.step()

        # generator + layout update
        parts = LossParts()
        parts.img = hinge_gen_loss(self.d_img(fake))
        parts.obj = hinge_gen_loss(
            object_losses(fake, pred_boxes, labels, self.d_obj, cfg.crop_size)
        )
        parts.app = hinge_gen_loss(appearance_scores(fake, pred_boxes, self.d_app))
        parts.rec = reconstruction_loss(real, fake)
        parts.per = perceptual_loss(real, fake, self.extractor)
        if box_preds:
            parts.box = F.mse_loss(torch.stack(box_preds), torch.stack(box_targets))
        g_total = total_generator_loss(parts, cfg.weights)
        self.opt_g.zero_grad()
        g_total.backward()
        self.opt_g.step()

        self.step += 1

        def _f(x) -> float:
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        record = {
            "step": self.step,
            "loss_box": _f(parts.box),
            "loss_img": _f(parts.img),
            "loss_obj": _f(parts.obj),
            "loss_per": _f(parts.per),
            "loss_rec": _f(parts.rec),
            "loss_app": _f(parts.app),
            "loss_total": _f(g_total),
            "disc_img": _f(d_img_loss),
            "disc_obj": _f(d_obj_loss),
            "disc_app": _f(d_app_loss),
        }
        bad = [k for k, v in record.items() if not np.isfinite(v)]
        if bad:
            raise NonFiniteLoss(f"non-finite losses at step {self.step}: {bad}")
        return record

    def bbox_error(self, batch: Sequence[AnnotatedSample]) -> float:
        """Mean |predicted (h, w) - GT (h, w)| over a batch's things."""
        tax = self.model.taxonomy
        m = self.model.layout_config.latent_dim
        errs = []
        with torch.no_grad():
            for sample in batch:
                scene = sample_to_scene(sample, size_max=self.model.layout_config.size_max)
                vscene = self.model.validate(scene)
                _, things = split_objects(vscene)
                thing_anns = [o for o in sample.objects if tax.kind_of(o.category) == THING]
                for obj, ann in zip(things, thing_anns):
                    z = torch.randn(m, generator=self.rng)
                    hw = self.model.plg.predict_bbox_hw(obj, z)
                    errs.append(float((hw - torch.tensor([ann.bbox[2], ann.bbox[3]])).abs().mean()))
        return float(np.mean(errs)) if errs else 0.0

    # --- persistence ---

    def save_checkpoint(self, path: str | Path) -> None:
        payload = {
            "step": self.step,
            "rng_state": self.rng.get_state(),
            "config": {
                "lr": self.config.lr,
                "betas": list(self.config.betas),
                "batch_size": self.config.batch_size,
                "seed": self.config.seed,
                "crop_size": self.config.crop_size,
                "weights": asdict(self.config.weights),
            },
            "plg": self.model.plg.state_dict(),
            "generator": self.model.generator.state_dict(),
            "d_img": self.d_img.state_dict(),
            "d_obj": self.d_obj.state_dict(),
            "d_app": self.d_app.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
        }
        torch.save(payload, path)

    def load_checkpoint(self, path: str | Path) -> None:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        self.step = payload["step"]
        self.rng.set_state(payload["rng_state"])
        cfg = payload["config"]
        self.config = TrainConfig(
            lr=cfg["lr"],
            betas=tuple(cfg["betas"]),
            batch_size=cfg["batch_size"],
            seed=cfg["seed"],
            crop_size=cfg["crop_size"],
            weights=LossWeights(**cfg["weights"]),
        )
        self.extractor = RandomFeatureExtractor(seed=self.config.seed)
        self.model.plg.load_state_dict(payload["plg"])
        self.model.generator.load_state_dict(payload["generator"])
        self.d_img.load_state_dict(payload["d_img"])
        self.d_obj.load_state_dict(payload["d_obj"])
        self.d_app.load_state_dict(payload["d_app"])
        self.opt_g.load_state_dict(payload["opt_g"])
        self.opt_d.load_state_dict(payload["opt_d"])


def parameter_checksum(params: nn.Module | Sequence[torch.Tensor]) -> float:
    """Cheap deterministic digest of parameters, for replay tests."""
    if isinstance(params, nn.Module):
        params = list(params.parameters())
    with torch.no_grad():
        return float(sum(p.double().abs().sum() for p in params))
