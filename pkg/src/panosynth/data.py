"""Dataset ingestion: simplified annotation JSON, filtering rules, the
synthetic shapes dataset used for desk-scale training, and the mapping
from an annotated sample back to a scene description.

Annotation format (``annotations.json`` next to an ``images/`` directory)::

    {"samples": [
        {"image": "images/0001.png",
         "split": "train",
         "objects": [
            {"category": 3,
             "bbox": [cx, cy, h, w],          # normalized center + extents
             "mask": "masks/0001_0.png"}      # optional; filled bbox if absent
         ]}
    ]}

Image files are PNG; pixel values are mapped to [-1, 1] on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import BadConfig, CategoryMismatch, MissingFile, SchemaViolation
from .scene import (
    Category,
    CategoryTaxonomy,
    ObjectSpec,
    Scene,
    side_fraction,
    size_from_area,
    STUFF,
    THING,
)


@dataclass(frozen=True)
class AnnotatedObject:
    category: int
    bbox: tuple[float, float, float, float]  # (cx, cy, h, w), normalized
    mask: np.ndarray  # H x W bool


@dataclass(frozen=True)
class AnnotatedSample:
    image: np.ndarray  # H x W x 3 float32 in [-1, 1]
    objects: tuple[AnnotatedObject, ...]
    split: str = "train"

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])


@dataclass(frozen=True)
class DatasetFilter:
    min_objects: int = 3
    max_objects: int = 8
    min_coverage: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.min_coverage <= 1.0:
            raise BadConfig("min_coverage must lie in [0, 1]")
        if self.min_objects > self.max_objects:
            raise BadConfig("min_objects must not exceed max_objects")


def _load_image(path: Path, resolution: int | None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if resolution is not None and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return arr


def _load_mask(path: Path, shape: tuple[int, int]) -> np.ndarray:
    img = Image.open(path).convert("L")
    if img.size != (shape[1], shape[0]):
        img = img.resize((shape[1], shape[0]), Image.NEAREST)
    return np.asarray(img) > 0


def _bbox_mask(bbox: Sequence[float], h: int, w: int) -> np.ndarray:
    cx, cy, bh, bw = bbox
    y0 = int(round((cy - bh / 2) * h))
    y1 = int(round((cy + bh / 2) * h))
    x0 = int(round((cx - bw / 2) * w))
    x1 = int(round((cx + bw / 2) * w))
    mask = np.zeros((h, w), dtype=bool)
    mask[max(y0, 0): max(y1, y0 + 1), max(x0, 0): max(x1, x0 + 1)] = True
    return mask


def load_annotations(
    path: str | Path,
    taxonomy: CategoryTaxonomy,
    resolution: int | None = None,
) -> Iterator[AnnotatedSample]:
    """Stream samples from an annotation directory.

    ``resolution`` resizes images and masks to a square working resolution;
    None keeps the stored size.
    """
    root = Path(path)
    ann_path = root / "annotations.json"
    if not ann_path.exists():
        raise MissingFile(f"annotation file not found: {ann_path}")
    try:
        doc = json.loads(ann_path.read_text())
        samples = doc["samples"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise SchemaViolation(f"malformed annotation file {ann_path}: {e}") from e

    for entry in samples:
        try:
            image_rel = entry["image"]
            raw_objects = entry["objects"]
            split = entry.get("split", "train")
        except (KeyError, TypeError) as e:
            raise SchemaViolation(f"malformed sample entry: {e}") from e
        image_path = root / image_rel
        if not image_path.exists():
            raise MissingFile(f"image file not found: {image_path}")
        image = _load_image(image_path, resolution)
        h, w = image.shape[:2]
        objects = []
        for obj in raw_objects:
            try:
                category = int(obj["category"])
                bbox = tuple(float(v) for v in obj["bbox"])
            except (KeyError, TypeError, ValueError) as e:
                raise SchemaViolation(f"malformed object entry: {e}") from e
            if len(bbox) != 4 or not all(0.0 <= v <= 1.0 for v in bbox):
                raise SchemaViolation(f"bbox {bbox} outside [0,1]")
            if not 0 <= category < taxonomy.num_categories:
                raise CategoryMismatch(
                    f"category {category} not in taxonomy of size {taxonomy.num_categories}"
                )
            if "mask" in obj and obj["mask"]:
                mask = _load_mask(root / obj["mask"], (h, w))
            else:
                mask = _bbox_mask(bbox, h, w)
            objects.append(AnnotatedObject(category=category, bbox=bbox, mask=mask))
        yield AnnotatedSample(image=image, objects=tuple(objects), split=split)


def filter_samples(
    samples: Iterable[AnnotatedSample], flt: DatasetFilter
) -> Iterator[AnnotatedSample]:
    """Drop under-covered objects, then samples outside the object-count
    window. Order-preserving and idempotent."""
    for sample in samples:
        canvas = sample.height * sample.width
        kept = tuple(
            o for o in sample.objects if o.mask.sum() / canvas >= flt.min_coverage
        )
        if flt.min_objects <= len(kept) <= flt.max_objects:
            yield AnnotatedSample(image=sample.image, objects=kept, split=sample.split)


# --- synthetic shapes dataset ---

_SHAPES = ("circle", "square", "triangle")


@dataclass(frozen=True)
class SynthShapesConfig:
    """Desk-scale dataset of textured backgrounds and colored sprites.

    Stuff categories render as vertical color gradients that partition the
    canvas; thing categories are solid circle/square/triangle sprites.
    """

    stuff_colors: tuple[tuple[int, int, int], ...] = ((70, 120, 200), (60, 160, 70))
    thing_shapes: tuple[str, ...] = ("circle", "square", "triangle")
    thing_colors: tuple[tuple[int, int, int], ...] = (
        (220, 60, 60),
        (235, 200, 40),
        (150, 60, 190),
    )
    resolution: int = 64
    min_things: int = 1
    max_things: int = 4
    thing_weights: tuple[float, ...] | None = None
    size_max: int = 25

    def __post_init__(self):
        if len(self.stuff_colors) < 1:
            raise BadConfig("need at least one stuff category")
        if len(self.thing_shapes) != len(self.thing_colors):
            raise BadConfig("thing_shapes and thing_colors must align")
        for s in self.thing_shapes:
            if s not in _SHAPES:
                raise BadConfig(f"unknown sprite shape {s!r}")
        if self.thing_weights is not None and len(self.thing_weights) != len(self.thing_shapes):
            raise BadConfig("thing_weights must align with thing_shapes")

    @property
    def num_stuff(self) -> int:
        return len(self.stuff_colors)

    @property
    def num_things(self) -> int:
        return len(self.thing_shapes)

    def taxonomy(self) -> CategoryTaxonomy:
        cats = [
            Category(i, f"stuff_{i}", STUFF) for i in range(self.num_stuff)
        ] + [
            Category(self.num_stuff + j, self.thing_shapes[j], THING)
            for j in range(self.num_things)
        ]
        return CategoryTaxonomy(tuple(cats))


def _sprite_mask(shape: str, side: int) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    if shape == "circle":
        return (yy - c) ** 2 + (xx - c) ** 2 <= (side / 2.0) ** 2
    if shape == "square":
        return np.ones((side, side), dtype=bool)
    # triangle: apex at top center, base at the bottom
    frac = (yy + 1) / side
    return np.abs(xx - c) <= frac * side / 2.0


def _render_background(
    cfg: SynthShapesConfig, stuff_ids: list[int], boundary: int, rng: np.random.Generator
) -> tuple[np.ndarray, list[np.ndarray]]:
    h = w = cfg.resolution
    image = np.zeros((h, w, 3), dtype=np.float32)
    masks = []
    rows = [(0, boundary), (boundary, h)] if len(stuff_ids) == 2 else [(0, h)]
    for cat, (y0, y1) in zip(stuff_ids, rows):
        base = np.asarray(cfg.stuff_colors[cat], dtype=np.float32) / 127.5 - 1.0
        shade = np.linspace(-0.25, 0.25, max(y1 - y0, 1), dtype=np.float32)
        jitter = rng.uniform(-0.05, 0.05)
        region = np.clip(base[None, None, :] + shade[:, None, None] + jitter, -1, 1)
        image[y0:y1] = region
        mask = np.zeros((h, w), dtype=bool)
        mask[y0:y1] = True
        masks.append(mask)
    return image, masks


def synth_shapes_dataset(
    cfg: SynthShapesConfig, seed: int, count: int
) -> Iterator[AnnotatedSample]:
    """Generate `count` samples deterministically from the seed."""
    rng = np.random.default_rng(seed)
    h = w = cfg.resolution
    weights = (
        np.asarray(cfg.thing_weights, dtype=float)
        if cfg.thing_weights is not None
        else np.ones(cfg.num_things)
    )
    if cfg.num_things:
        weights = weights / weights.sum()

    for _ in range(count):
        # background: one or two stuff regions split by a horizontal boundary
        n_stuff = 1 if cfg.num_stuff == 1 else int(rng.integers(1, 3))
        stuff_ids = [int(c) for c in rng.choice(cfg.num_stuff, size=n_stuff, replace=False)]
        boundary = int(rng.integers(h // 4, 3 * h // 4)) if n_stuff == 2 else h
        image, stuff_masks = _render_background(cfg, stuff_ids, boundary, rng)

        objects = []
        for cat, mask in zip(stuff_ids, stuff_masks):
            ys, xs = np.nonzero(mask)
            bbox = (
                float((xs.min() + xs.max() + 1) / 2 / w),
                float((ys.min() + ys.max() + 1) / 2 / h),
                float((ys.max() - ys.min() + 1) / h),
                float((xs.max() - xs.min() + 1) / w),
            )
            objects.append(AnnotatedObject(category=cat, bbox=bbox, mask=mask))

        n_things = (
            int(rng.integers(cfg.min_things, cfg.max_things + 1)) if cfg.num_things else 0
        )
        for _ in range(n_things):
            j = int(rng.choice(cfg.num_things, p=weights))
            cat = cfg.num_stuff + j
            size = int(rng.integers(2, max(cfg.size_max // 2, 3)))
            side = max(int(round(side_fraction(size, cfg.size_max) * min(h, w))), 2)
            cx = rng.uniform(0.15, 0.85)
            cy = rng.uniform(0.15, 0.85)
            x0 = int(round(cx * w - side / 2))
            y0 = int(round(cy * h - side / 2))
            sprite = _sprite_mask(cfg.thing_shapes[j], side)
            # clip sprite placement at canvas borders
            sy0, sx0 = max(-y0, 0), max(-x0, 0)
            sy1 = side - max(y0 + side - h, 0)
            sx1 = side - max(x0 + side - w, 0)
            if sy1 <= sy0 or sx1 <= sx0:
                continue
            mask = np.zeros((h, w), dtype=bool)
            mask[y0 + sy0: y0 + sy1, x0 + sx0: x0 + sx1] = sprite[sy0:sy1, sx0:sx1]
            if not mask.any():
                continue
            color = np.asarray(cfg.thing_colors[j], dtype=np.float32) / 127.5 - 1.0
            image[mask] = color
            ys, xs = np.nonzero(mask)
            bbox = (
                float((xs.min() + xs.max() + 1) / 2 / w),
                float((ys.min() + ys.max() + 1) / 2 / h),
                float((ys.max() - ys.min() + 1) / h),
                float((xs.max() - xs.min() + 1) / w),
            )
            objects.append(AnnotatedObject(category=cat, bbox=bbox, mask=mask))

        yield AnnotatedSample(image=image, objects=tuple(objects), split="train")


def sample_to_scene(sample: AnnotatedSample, size_max: int = 25) -> Scene:
    """Derive the scene description a user would have drawn for a sample:
    centers from bbox centers, size index quantized from bbox area."""
    objects = tuple(
        ObjectSpec(
            category=int(o.category),
            cx=float(o.bbox[0]),
            cy=float(o.bbox[1]),
            size=size_from_area(float(o.bbox[2]) * float(o.bbox[3]), size_max),
        )
        for o in sample.objects
    )
    return Scene(objects=objects, height=sample.height, width=sample.width)


def write_dataset(
    samples: Iterable[AnnotatedSample], out_dir: str | Path
) -> Path:
    """Persist samples as PNGs + annotation JSON (the documented format)."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        img_rel = f"images/{i:05d}.png"
        arr = ((sample.image + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
        Image.fromarray(arr).save(root / img_rel)
        objs = []
        for j, o in enumerate(sample.objects):
            mask_rel = f"masks/{i:05d}_{j}.png"
            Image.fromarray((o.mask * 255).astype(np.uint8)).save(root / mask_rel)
            objs.append(
                {"category": o.category, "bbox": list(o.bbox), "mask": mask_rel}
            )
        entries.append({"image": img_rel, "split": sample.split, "objects": objs})
    (root / "annotations.json").write_text(json.dumps({"samples": entries}))
    return root / "annotations.json"
