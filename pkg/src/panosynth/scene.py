"""Scene description language: taxonomy, object specs, validation,
latent sampling and the center-perturbation used by the robustness sweep.

All functions here are pure; values are freely shareable across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    CanvasNotDivisible,
    CenterOutOfRange,
    EmptyScene,
    NegativeRange,
    SizeOutOfSet,
    UnknownCategory,
)

STUFF = "stuff"
THING = "thing"

DEFAULT_SIZE_SET = tuple(range(1, 26))
DEFAULT_MAX_OBJECTS = 8
DEFAULT_LATENT_DIM = 128


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    kind: str  # "stuff" | "thing"


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Ordered stuff/thing category table with dense ids 0..|C|-1."""

    categories: tuple[Category, ...]

    def __post_init__(self):
        ids = [c.id for c in self.categories]
        if ids != list(range(len(ids))):
            raise UnknownCategory("category ids must be dense 0..N-1 in order")
        for c in self.categories:
            if c.kind not in (STUFF, THING):
                raise UnknownCategory(f"category {c.id} has unknown kind {c.kind!r}")
        if self.num_stuff < 1:
            raise UnknownCategory("taxonomy needs at least one stuff category")

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def stuff_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.categories if c.kind == STUFF)

    @property
    def thing_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.categories if c.kind == THING)

    @property
    def num_stuff(self) -> int:
        return sum(1 for c in self.categories if c.kind == STUFF)

    @property
    def num_things(self) -> int:
        return sum(1 for c in self.categories if c.kind == THING)

    def kind_of(self, category_id: int) -> str:
        if not 0 <= category_id < len(self.categories):
            raise UnknownCategory(f"category id {category_id} not in taxonomy")
        return self.categories[category_id].kind

    def name_of(self, category_id: int) -> str:
        if not 0 <= category_id < len(self.categories):
            raise UnknownCategory(f"category id {category_id} not in taxonomy")
        return self.categories[category_id].name

    def stuff_channel(self, category_id: int) -> int:
        """Index of a stuff category within the stuff layout stack."""
        return self.stuff_ids.index(category_id)

    def thing_channel(self, category_id: int) -> int:
        """Index of a thing category within the thing embedding table."""
        return self.thing_ids.index(category_id)

    def content_hash(self) -> str:
        import hashlib

        blob = json.dumps(
            [[c.id, c.name, c.kind] for c in self.categories], separators=(",", ":")
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "categories": [
                {"id": c.id, "name": c.name, "kind": c.kind} for c in self.categories
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CategoryTaxonomy":
        cats = tuple(
            Category(int(c["id"]), str(c["name"]), str(c["kind"]))
            for c in obj["categories"]
        )
        return cls(cats)

    @classmethod
    def load(cls, path: str | Path) -> "CategoryTaxonomy":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class ObjectSpec:
    category: int
    cx: float
    cy: float
    size: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectSpec, ...]
    height: int
    width: int

    def to_json(self) -> dict:
        return {
            "canvas": {"h": self.height, "w": self.width},
            "objects": [
                {"category": o.category, "cx": o.cx, "cy": o.cy, "size": o.size}
                for o in self.objects
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        objects = tuple(
            ObjectSpec(int(o["category"]), float(o["cx"]), float(o["cy"]), int(o["size"]))
            for o in obj["objects"]
        )
        return cls(objects, int(obj["canvas"]["h"]), int(obj["canvas"]["w"]))


@dataclass(frozen=True)
class ValidatedScene:
    """Scene plus per-object kind annotation (same order as the scene)."""

    scene: Scene
    kinds: tuple[str, ...]

    @property
    def objects(self) -> tuple[ObjectSpec, ...]:
        return self.scene.objects


@dataclass(frozen=True)
class LatentCode:
    values: np.ndarray
    purpose: Literal["stuff", "thing", "image"]

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])


def side_fraction(size: int, size_max: int = DEFAULT_SIZE_SET[-1]) -> float:
    """Side length of a size index as a fraction of the canvas.

    Area scales linearly with the index: side = sqrt(s / s_max).
    """
    return math.sqrt(size / size_max)


def size_from_area(area: float, size_max: int = DEFAULT_SIZE_SET[-1]) -> int:
    """Nearest size index whose side_fraction matches sqrt(area)."""
    return int(min(max(round(area * size_max), 1), size_max))


def validate_scene(
    scene: Scene,
    taxonomy: CategoryTaxonomy,
    size_set: Sequence[int] = DEFAULT_SIZE_SET,
    max_objects: int = DEFAULT_MAX_OBJECTS,
    divisor: int = 16,
) -> ValidatedScene:
    """Check a scene against the taxonomy and canvas constraints.

    The canvas must be a positive multiple of the generator's total
    upsampling factor (``divisor``).
    """
    if not scene.objects:
        raise EmptyScene("scene contains no objects")
    if len(scene.objects) > max_objects:
        raise EmptyScene(
            f"scene has {len(scene.objects)} objects, max is {max_objects}"
        )
    if scene.height <= 0 or scene.width <= 0 or scene.height % divisor or scene.width % divisor:
        raise CanvasNotDivisible(
            f"canvas {scene.height}x{scene.width} must be a positive multiple of {divisor}"
        )
    size_set = set(size_set)
    kinds = []
    for i, obj in enumerate(scene.objects):
        kind = taxonomy.kind_of(obj.category)  # raises UnknownCategory
        if not (0.0 <= obj.cx <= 1.0 and 0.0 <= obj.cy <= 1.0):
            raise CenterOutOfRange(f"object {i} center ({obj.cx}, {obj.cy}) outside [0,1]^2")
        if obj.size not in size_set:
            raise SizeOutOfSet(f"object {i} size {obj.size} not in configured set")
        kinds.append(kind)
    return ValidatedScene(scene=scene, kinds=tuple(kinds))


def split_objects(
    vscene: ValidatedScene,
) -> tuple[list[ObjectSpec], list[ObjectSpec]]:
    """Partition a validated scene into (stuff, things), order preserved."""
    stuff = [o for o, k in zip(vscene.objects, vscene.kinds) if k == STUFF]
    things = [o for o, k in zip(vscene.objects, vscene.kinds) if k == THING]
    return stuff, things


def perturb_scene(scene: Scene, r: float, seed: int) -> Scene:
    """Offset every object center by an i.i.d. per-axis uniform draw in
    [-r, r] (fraction of canvas), clamped to [0,1]. Deterministic in seed."""
    if r < 0:
        raise NegativeRange(f"perturbation range {r} must be >= 0")
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-r, r, size=(len(scene.objects), 2))
    perturbed = tuple(
        replace(
            o,
            cx=float(np.clip(o.cx + offsets[i, 0], 0.0, 1.0)),
            cy=float(np.clip(o.cy + offsets[i, 1], 0.0, 1.0)),
        )
        for i, o in enumerate(scene.objects)
    )
    return replace(scene, objects=perturbed)


def sample_latent(
    purpose: Literal["stuff", "thing", "image"],
    dim: int = DEFAULT_LATENT_DIM,
    rng: np.random.Generator | None = None,
    n: int | None = None,
) -> LatentCode:
    """Standard-Gaussian latent code(s); shape (dim,) or (n, dim)."""
    rng = rng if rng is not None else np.random.default_rng()
    shape = (dim,) if n is None else (n, dim)
    return LatentCode(values=rng.standard_normal(shape), purpose=purpose)
