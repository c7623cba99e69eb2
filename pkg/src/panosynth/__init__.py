"""Interactive image synthesis from panoptic stuff/thing layouts."""

from .scene import (
    Category,
    CategoryTaxonomy,
    LatentCode,
    ObjectSpec,
    Scene,
    ValidatedScene,
    perturb_scene,
    split_objects,
    validate_scene,
)
from .pipeline import SynthesisModel

__all__ = [
    "Category",
    "CategoryTaxonomy",
    "LatentCode",
    "ObjectSpec",
    "Scene",
    "SynthesisModel",
    "ValidatedScene",
    "perturb_scene",
    "split_objects",
    "validate_scene",
]

__version__ = "0.1.0"
