"""Run configuration: one JSON-serializable record that drives training
runs from the CLI and round-trips losslessly through its file format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .data import SynthShapesConfig
from .losses import LossWeights
from .errors import BadConfig


@dataclass(frozen=True)
class RunConfig:
    resolution: int = 64
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    mode: str = "panoptic"
    use_guided_filter: bool = True
    latent_dim: int = 128
    stem_width: int = 128
    dataset_path: str | None = None  # annotation dir; None -> synthetic shapes
    dataset_size: int = 2000
    checkpoint_every: int = 250
    weights: LossWeights = field(default_factory=LossWeights)
    synth_shapes: SynthShapesConfig = field(default_factory=SynthShapesConfig)

    def __post_init__(self):
        if self.resolution & (self.resolution - 1) or self.resolution < 16:
            raise BadConfig("resolution must be a power of two >= 16")

    @property
    def stages(self) -> int:
        return (self.resolution // 4).bit_length() - 1

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        if "weights" in obj and isinstance(obj["weights"], dict):
            obj["weights"] = LossWeights(**obj["weights"])
        if "synth_shapes" in obj and isinstance(obj["synth_shapes"], dict):
            ss = dict(obj["synth_shapes"])
            for key in ("stuff_colors", "thing_colors"):
                if key in ss:
                    ss[key] = tuple(tuple(c) for c in ss[key])
            for key in ("thing_shapes", "thing_weights"):
                if key in ss and ss[key] is not None:
                    ss[key] = tuple(ss[key])
            obj["synth_shapes"] = SynthShapesConfig(**ss)
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text()))
