"""Rasterization and export helpers: PNG encoding of synthesized images,
color-coded panoptic layout previews with a stable category -> color map,
and the lossless layout dump (array container + JSON sidecar).
"""

from __future__ import annotations

import base64
import colorsys
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .layout import InstanceLayout, StuffLayout
from .pipeline import SceneLayouts
from .scene import CategoryTaxonomy


def category_color(category_id: int) -> tuple[int, int, int]:
    """Deterministic, well-spread color per category id (golden-angle hue)."""
    hue = (category_id * 0.61803398875) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def image_to_png_bytes(image: np.ndarray) -> bytes:
    """(H, W, 3) array in [-1, 1] -> PNG bytes."""
    arr = ((np.asarray(image) + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_base64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def layout_preview(
    layouts: SceneLayouts,
    taxonomy: CategoryTaxonomy,
    tau: float = 0.1,
) -> np.ndarray:
    """Color-coded (H, W, 3) uint8 preview: stuff argmax below, instances
    painted on top where their mass exceeds tau; uncovered pixels black."""
    inst = layouts.instances
    H, W = inst.canvas if layouts.stuff is None else layouts.stuff.canvas
    out = np.zeros((H, W, 3), dtype=np.uint8)

    if layouts.stuff is not None and layouts.stuff.active:
        masks = layouts.stuff.masks.detach().numpy()
        active = list(layouts.stuff.active)
        sub = masks[active]
        arg = sub.argmax(axis=0)
        present = sub.sum(axis=0) > 0.5
        stuff_ids = taxonomy.stuff_ids
        for k, ch in enumerate(active):
            color = category_color(stuff_ids[ch])
            out[present & (arg == k)] = color

    if inst.count:
        masks = inst.masks.detach().numpy()
        thing_ids = taxonomy.thing_ids
        for i in range(inst.count):
            cat = inst.categories[i] if inst.categories else thing_ids[0]
            covered = masks[i] > tau
            out[covered] = category_color(cat)
    return out


def save_layout_dump(
    layouts: SceneLayouts, taxonomy: CategoryTaxonomy, path: str | Path
) -> None:
    """Write layouts as a compressed array container plus a JSON sidecar
    describing active channels and per-slice object categories."""
    path = Path(path)
    arrays = {"instance_masks": layouts.instances.masks.detach().numpy()}
    sidecar = {
        "taxonomy_hash": taxonomy.content_hash(),
        "instance_categories": list(layouts.instances.categories),
        "thing_channels": list(layouts.thing_channels),
        "stuff_active": [],
    }
    if layouts.stuff is not None:
        arrays["stuff_masks"] = layouts.stuff.masks.detach().numpy()
        sidecar["stuff_active"] = list(layouts.stuff.active)
    np.savez_compressed(path, **arrays)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
