"""Layout coverage metric, the perturbation sweep protocol, and result
export. External image-quality scorers (inception-style metrics) plug in
through a minimal callable contract and stay out of the core.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .errors import IOFailure
from .layout import InstanceLayout, StuffLayout
from .pipeline import SceneLayouts, SynthesisModel
from .scene import Scene, perturb_scene


class Scorer(Protocol):
    """Plug-in contract for external image-quality metrics."""

    name: str
    input_resolution: int

    def __call__(self, images: np.ndarray) -> float:
        """images: (N, H, W, 3) in [-1, 1] -> scalar score."""
        ...


@dataclass(frozen=True)
class StubScorer:
    """Contract-test scorer: mean absolute pixel value (no pretrained net)."""

    name: str = "stub"
    input_resolution: int = 64

    def __call__(self, images: np.ndarray) -> float:
        return float(np.abs(images).mean())


def coverage(
    stuff: StuffLayout | None,
    instances: InstanceLayout,
    tau: float = 0.1,
) -> float:
    """Percentage of canvas pixels claimed by the layout.

    A pixel is covered when the summed instance mass exceeds tau, or when a
    stuff layout is present and its active-channel sum exceeds 0.5 (vacuous
    for normalized layouts, a guard for unnormalized debug inputs).
    """
    if stuff is not None:
        H, W = stuff.canvas
    else:
        H, W = instances.canvas
    covered = torch.zeros(H, W, dtype=torch.bool)
    if instances.count:
        covered |= instances.masks.sum(dim=0) > tau
    if stuff is not None and stuff.active:
        covered |= stuff.masks[list(stuff.active)].sum(dim=0) > 0.5
    value = 100.0 * covered.sum().item() / (H * W)
    return float(min(max(value, 0.0), 100.0))


@dataclass
class SweepCell:
    range: float
    seed: int
    metric: str
    value: float


@dataclass
class SweepResult:
    ranges: tuple[float, ...]
    seeds: tuple[int, ...]
    cells: list[SweepCell] = field(default_factory=list)

    def aggregate(self, metric: str) -> dict[float, tuple[float, float]]:
        """Per-range (mean, stderr) over seeds for one metric."""
        out = {}
        for r in self.ranges:
            vals = [c.value for c in self.cells if c.metric == metric and c.range == r]
            arr = np.asarray(vals, dtype=float)
            stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            out[r] = (float(arr.mean()), stderr)
        return out

    def metrics(self) -> tuple[str, ...]:
        seen = []
        for c in self.cells:
            if c.metric not in seen:
                seen.append(c.metric)
        return tuple(seen)


def layout_checksum(layouts: SceneLayouts) -> str:
    """Stable digest of a layout set, for replay/baseline comparison."""
    h = hashlib.sha256()
    if layouts.stuff is not None:
        h.update(layouts.stuff.masks.numpy().tobytes())
        h.update(bytes(layouts.stuff.active))
    h.update(layouts.instances.masks.numpy().tobytes())
    return h.hexdigest()


def perturbation_sweep(
    model: SynthesisModel,
    scenes: Sequence[Scene],
    ranges: Sequence[float],
    seeds: Sequence[int] = (0,),
    tau: float = 0.1,
    scorers: Sequence[Scorer] = (),
    latent_seed: int = 0,
) -> SweepResult:
    """Evaluate layout coverage (and optional plug-in scores) per
    (perturbation range, seed) cell. The same latent seed is reused for
    every cell so range 0 reproduces the unperturbed baseline exactly."""
    result = SweepResult(ranges=tuple(ranges), seeds=tuple(seeds))
    for r in ranges:
        for seed in seeds:
            covs = []
            images = [] if scorers else None
            for i, scene in enumerate(scenes):
                pscene = perturb_scene(scene, r, seed=seed * 100003 + i)
                vscene = model.validate(pscene)
                if images is not None:
                    img, layouts = model.synthesize(vscene, seed=latent_seed + i)
                    images.append(img)
                else:
                    layouts = model.layouts_for_scene(vscene, seed=latent_seed + i)
                covs.append(coverage(layouts.stuff, layouts.instances, tau))
            result.cells.append(
                SweepCell(range=float(r), seed=int(seed), metric="coverage",
                          value=float(np.mean(covs)))
            )
            for scorer in scorers:
                batch = np.stack(images)
                result.cells.append(
                    SweepCell(range=float(r), seed=int(seed), metric=scorer.name,
                              value=scorer(batch))
                )
    return result


def export_results(result: SweepResult, out_dir: str | Path) -> list[Path]:
    """Write `sweep.csv` (range,seed,metric,value) plus one line plot per
    metric; re-export of the same result is byte-identical for the CSV."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IOFailure(f"cannot create output directory {out}: {e}") from e
    written = []

    csv_path = out / "sweep.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["range", "seed", "metric", "value"])
    for c in result.cells:
        writer.writerow([repr(c.range), c.seed, c.metric, repr(c.value)])
    csv_path.write_text(buf.getvalue())
    written.append(csv_path)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for metric in result.metrics():
        agg = result.aggregate(metric)
        xs = sorted(agg)
        means = [agg[x][0] for x in xs]
        errs = [agg[x][1] for x in xs]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(xs, means, yerr=errs, marker="o")
        ax.set_xlabel("perturbation range")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs perturbation range")
        fig.tight_layout()
        plot_path = out / f"sweep_{metric}.png"
        fig.savefig(plot_path)
        plt.close(fig)
        written.append(plot_path)
    return written
