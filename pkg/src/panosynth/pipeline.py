"""End-to-end synthesis model: wraps the layout generator and the image
generator behind scene-level entry points, and owns the checkpoint format
shared by the trainer, the CLI and the HTTP service.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointMismatch
from .generator import GeneratorConfig, ImageGenerator, LayoutBundle, LAYOUT_MODES
from .layout import (
    InstanceLayout,
    LayoutConfig,
    PanopticLayoutGenerator,
    StuffLayout,
    empty_instance_layout,
)
from .scene import (
    CategoryTaxonomy,
    Scene,
    ValidatedScene,
    split_objects,
    validate_scene,
)

CHECKPOINT_VERSION = 1


@dataclass
class SceneLayouts:
    stuff: StuffLayout | None
    instances: InstanceLayout
    thing_channels: tuple[int, ...]

    def bundle(self) -> LayoutBundle:
        return LayoutBundle(
            stuff=self.stuff,
            instances=self.instances,
            thing_channels=self.thing_channels,
        )


class SynthesisModel:
    """Taxonomy + both generators + configuration, as one unit."""

    def __init__(
        self,
        taxonomy: CategoryTaxonomy,
        layout_config: LayoutConfig | None = None,
        generator_config: GeneratorConfig | None = None,
        mode: str = "panoptic",
        use_guided_filter: bool = True,
    ):
        if mode not in LAYOUT_MODES:
            raise ValueError(f"unknown layout mode {mode!r}")
        self.taxonomy = taxonomy
        self.layout_config = layout_config or LayoutConfig()
        self.generator_config = generator_config or GeneratorConfig(
            latent_dim=self.layout_config.latent_dim
        )
        self.mode = mode
        self.use_guided_filter = use_guided_filter
        self.plg = PanopticLayoutGenerator(taxonomy, self.layout_config)
        self.generator = ImageGenerator(
            taxonomy.num_stuff, taxonomy.num_things, self.generator_config
        )

    # --- scene-level API ---

    def validate(self, scene: Scene) -> ValidatedScene:
        return validate_scene(
            scene,
            self.taxonomy,
            size_set=range(1, self.layout_config.size_max + 1),
            divisor=16,
        )

    def layouts_for_scene(
        self, vscene: ValidatedScene, seed: int
    ) -> SceneLayouts:
        """Deterministic layouts for a validated scene: latents are drawn
        from the seed, stuff branch first, then one per thing."""
        H, W = vscene.scene.height, vscene.scene.width
        stuff_objs, things = split_objects(vscene)
        gen = torch.Generator().manual_seed(seed)
        m = self.layout_config.latent_dim
        with torch.no_grad():
            z_st = torch.randn(m, generator=gen)
            stuff = None
            if stuff_objs and self.mode != "instance_only":
                stuff = self.plg.stuff_layout(stuff_objs, z_st, H, W)
            if things and self.mode != "stuff_only":
                z_th = [torch.randn(m, generator=gen) for _ in things]
                instances = self.plg.instance_layout(things, z_th, H, W)
            else:
                instances = empty_instance_layout(H, W)
        channels = tuple(
            self.taxonomy.thing_channel(c) for c in instances.categories
        )
        return SceneLayouts(stuff=stuff, instances=instances, thing_channels=channels)

    def synthesize(self, vscene: ValidatedScene, seed: int) -> tuple[np.ndarray, SceneLayouts]:
        """Full scene-to-image run; returns (H, W, 3) array in [-1, 1]."""
        layouts = self.layouts_for_scene(vscene, seed)
        gen = torch.Generator().manual_seed(seed ^ 0x5EED)
        z_im = torch.randn(1, self.generator_config.latent_dim, generator=gen)
        self.generator.eval()
        with torch.no_grad():
            img = self.generator(
                [layouts.bundle()], z_im,
                mode=self.mode, use_guided_filter=self.use_guided_filter,
            )
        return img[0].permute(1, 2, 0).numpy(), layouts

    # --- persistence ---

    def save(self, path: str | Path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "taxonomy": self.taxonomy.to_json(),
            "taxonomy_hash": self.taxonomy.content_hash(),
            "layout_config": asdict(self.layout_config),
            "generator_config": asdict(self.generator_config),
            "mode": self.mode,
            "use_guided_filter": self.use_guided_filter,
            "plg_state": self.plg.state_dict(),
            "generator_state": self.generator.state_dict(),
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path: str | Path, taxonomy: CategoryTaxonomy | None = None) -> "SynthesisModel":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        stored = CategoryTaxonomy.from_json(payload["taxonomy"])
        if taxonomy is not None and taxonomy.content_hash() != payload["taxonomy_hash"]:
            raise CheckpointMismatch(
                "checkpoint taxonomy does not match the requested taxonomy"
            )
        gc = payload["generator_config"]
        gc["widths"] = tuple(gc["widths"]) if gc.get("widths") else None
        model = cls(
            stored,
            layout_config=LayoutConfig(**payload["layout_config"]),
            generator_config=GeneratorConfig(**gc),
            mode=payload["mode"],
            use_guided_filter=payload["use_guided_filter"],
        )
        model.plg.load_state_dict(payload["plg_state"])
        model.generator.load_state_dict(payload["generator_state"])
        return model
