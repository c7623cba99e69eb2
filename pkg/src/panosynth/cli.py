"""Command-line entry points: training, evaluation sweeps, one-shot
synthesis, dataset generation, checkpoint initialization and the HTTP
service. Usage errors exit 2; runtime failures exit 1 with a
machine-readable ``error: <Code>: <message>`` line on stderr.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import RunConfig
from .data import (
    DatasetFilter,
    SynthShapesConfig,
    filter_samples,
    load_annotations,
    sample_to_scene,
    synth_shapes_dataset,
    write_dataset,
)
from .errors import PanosynthError
from .generator import GeneratorConfig, LAYOUT_MODES
from .layout import LayoutConfig
from .metrics import export_results, perturbation_sweep
from .pipeline import SynthesisModel
from .render import image_to_png_bytes, layout_preview
from .scene import CategoryTaxonomy, Scene
from .training import LOG_FIELDS, TrainConfig, Trainer


@click.group()
def cli():
    """Panoptic-layout image synthesis toolkit."""


def _load_model(checkpoint: str) -> SynthesisModel:
    return SynthesisModel.load(checkpoint)


def _training_samples(cfg: RunConfig):
    if cfg.dataset_path:
        tax = CategoryTaxonomy.load(Path(cfg.dataset_path) / "taxonomy.json")
        stream = load_annotations(cfg.dataset_path, tax, resolution=cfg.resolution)
        samples = list(filter_samples(stream, DatasetFilter()))
    else:
        ss = cfg.synth_shapes
        if ss.resolution != cfg.resolution:
            ss = SynthShapesConfig(**{**ss.__dict__, "resolution": cfg.resolution})
        tax = ss.taxonomy()
        samples = list(synth_shapes_dataset(ss, seed=cfg.seed, count=cfg.dataset_size))
    return tax, samples


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="runs/train", type=click.Path())
def train(config_path: str, out_dir: str):
    """Train a model from a run-config JSON file."""
    import torch

    cfg = RunConfig.load(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    torch.manual_seed(cfg.seed)
    tax, samples = _training_samples(cfg)
    model = SynthesisModel(
        tax,
        layout_config=LayoutConfig(latent_dim=cfg.latent_dim),
        generator_config=GeneratorConfig(
            latent_dim=cfg.latent_dim, stages=cfg.stages, stem_width=cfg.stem_width
        ),
        mode=cfg.mode,
        use_guided_filter=cfg.use_guided_filter,
    )
    trainer = Trainer(
        model,
        TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, weights=cfg.weights, seed=cfg.seed),
    )

    rng = np.random.default_rng(cfg.seed)
    log_path = out / "losses.csv"
    with open(log_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for step in range(cfg.steps):
            idx = rng.choice(len(samples), size=cfg.batch_size, replace=True)
            record = trainer.train_step([samples[i] for i in idx])
            writer.writerow(record)
            f.flush()
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps:
                model.save(out / "model.pt")
                trainer.save_checkpoint(out / "trainer.pt")
                click.echo(
                    f"step {record['step']}: rec={record['loss_rec']:.4f} "
                    f"box={record['loss_box']:.4f} total={record['loss_total']:.4f}"
                )
    click.echo(f"wrote {out / 'model.pt'} and {log_path}")


@cli.group(name="eval")
def eval_group():
    """Evaluation protocols."""


@eval_group.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--ranges", default="0,0.3,0.5", help="comma-separated perturbation ranges")
@click.option("--seeds", default="0", help="comma-separated perturbation seeds")
@click.option("--scenes", "n_scenes", default=50, help="number of evaluation scenes")
@click.option("--out", "out_dir", default="runs/sweep", type=click.Path())
def sweep(checkpoint: str, ranges: str, seeds: str, n_scenes: int, out_dir: str):
    """Coverage sweep across perturbation ranges."""
    model = _load_model(checkpoint)
    range_list = [float(r) for r in ranges.split(",")]
    seed_list = [int(s) for s in seeds.split(",")]
    ss = SynthShapesConfig(resolution=model.generator_config.output_size)
    scenes = [
        sample_to_scene(s)
        for s in synth_shapes_dataset(ss, seed=1234, count=n_scenes)
    ]
    result = perturbation_sweep(model, scenes, range_list, seed_list)
    files = export_results(result, out_dir)
    for path in files:
        click.echo(str(path))


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="runs/synth", type=click.Path())
@click.option("--seed", default=0, type=int)
def synth(scene_path: str, checkpoint: str, out_dir: str, seed: int):
    """Synthesize one scene into image.png and layout.png."""
    model = _load_model(checkpoint)
    scene = Scene.from_json(json.loads(Path(scene_path).read_text()))
    vscene = model.validate(scene)
    image, layouts = model.synthesize(vscene, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "image.png").write_bytes(image_to_png_bytes(image))
    preview = layout_preview(layouts, model.taxonomy, model.generator_config.tau)
    (out / "layout.png").write_bytes(
        image_to_png_bytes(preview.astype(float) / 127.5 - 1.0)
    )
    click.echo(f"wrote {out / 'image.png'} and {out / 'layout.png'}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--port", default=None, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--static-dir", default=None, type=click.Path(exists=True))
def serve(checkpoint: str, port: int | None, host: str, static_dir: str | None):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import create_app

    model = _load_model(checkpoint)
    app = create_app(model, static_dir=static_dir)
    port = port or int(os.environ.get("PANOSYNTH_PORT", "8000"))
    uvicorn.run(app, host=host, port=port)


@cli.group()
def dataset():
    """Dataset utilities."""


@dataset.command(name="synth")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--count", default=200, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", default="runs/dataset", type=click.Path())
def dataset_synth(config_path: str | None, count: int, seed: int, out_dir: str):
    """Generate a synthetic shapes dataset on disk."""
    if config_path:
        cfg = RunConfig.load(config_path).synth_shapes
    else:
        cfg = SynthShapesConfig()
    samples = synth_shapes_dataset(cfg, seed=seed, count=count)
    ann = write_dataset(samples, out_dir)
    tax_path = Path(out_dir) / "taxonomy.json"
    tax_path.write_text(json.dumps(cfg.taxonomy().to_json(), indent=2))
    click.echo(f"wrote {ann} and {tax_path}")


@cli.command()
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--resolution", default=128, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--mode", default="panoptic", type=click.Choice(LAYOUT_MODES))
@click.option("--out", "out_path", required=True, type=click.Path())
def init(taxonomy_path: str, resolution: int, seed: int, mode: str, out_path: str):
    """Write an untrained random-weight checkpoint for smoke testing."""
    import torch

    torch.manual_seed(seed)
    tax = CategoryTaxonomy.load(taxonomy_path)
    stages = (resolution // 4).bit_length() - 1
    model = SynthesisModel(
        tax, generator_config=GeneratorConfig(stages=stages), mode=mode
    )
    model.save(out_path)
    click.echo(f"wrote {out_path}")


def main() -> int:
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        return 130
    except PanosynthError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
