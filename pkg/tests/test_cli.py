"""Command-line interface tests (in-process via click's CliRunner)."""
import csv
import json

import pytest
from click.testing import CliRunner

from panosynth.cli import cli

from conftest import make_tiny_model


@pytest.fixture(scope="module")
def checkpoint(taxonomy, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    make_tiny_model(taxonomy, stages=2).save(path)
    return str(path)


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "scene.json"
    path.write_text(json.dumps({
        "canvas": {"h": 16, "w": 16},
        "objects": [
            {"category": 0, "cx": 0.5, "cy": 0.25, "size": 25},
            {"category": 1, "cx": 0.5, "cy": 0.75, "size": 25},
            {"category": 2, "cx": 0.5, "cy": 0.5, "size": 4},
        ],
    }))
    return str(path)


def test_synth_writes_images(checkpoint, scene_file, tmp_path):
    out = tmp_path / "synth"
    result = CliRunner().invoke(cli, [
        "synth", "--scene", scene_file, "--checkpoint", checkpoint,
        "--out", str(out), "--seed", "1",
    ])
    assert result.exit_code == 0, result.output
    assert (out / "image.png").read_bytes()[:4] == b"\x89PNG"
    assert (out / "layout.png").read_bytes()[:4] == b"\x89PNG"


def test_synth_seed_changes_output(checkpoint, scene_file, tmp_path):
    runner = CliRunner()
    outs = []
    for seed in ("1", "2"):
        out = tmp_path / f"s{seed}"
        result = runner.invoke(cli, [
            "synth", "--scene", scene_file, "--checkpoint", checkpoint,
            "--out", str(out), "--seed", seed,
        ])
        assert result.exit_code == 0, result.output
        outs.append((out / "image.png").read_bytes())
    assert outs[0] != outs[1]


def test_eval_sweep_csv_cardinality(checkpoint, tmp_path):
    out = tmp_path / "sweep"
    result = CliRunner().invoke(cli, [
        "eval", "sweep", "--checkpoint", checkpoint,
        "--ranges", "0,0.3,0.5", "--seeds", "0,1", "--scenes", "4",
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    with open(out / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert {r["range"] for r in rows} == {"0.0", "0.3", "0.5"}
    assert {r["seed"] for r in rows} == {"0", "1"}
    # one coverage row per (range, seed) pair
    cov = [r for r in rows if r["metric"] == "coverage"]
    assert len(cov) == 6


def test_dataset_synth(tmp_path):
    out = tmp_path / "data"
    result = CliRunner().invoke(cli, [
        "dataset", "synth", "--count", "3", "--seed", "0", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    ann = json.loads((out / "annotations.json").read_text())
    assert len(ann["samples"]) == 3
    assert (out / "taxonomy.json").exists()


def test_init_writes_checkpoint(tmp_path):
    from panosynth.data import SynthShapesConfig
    from panosynth.pipeline import SynthesisModel

    tax_path = tmp_path / "taxonomy.json"
    tax_path.write_text(json.dumps(SynthShapesConfig().taxonomy().to_json()))
    out = tmp_path / "init.pt"
    result = CliRunner().invoke(cli, [
        "init", "--taxonomy", str(tax_path), "--resolution", "16",
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    model = SynthesisModel.load(out)
    assert model.generator_config.output_size == 16


def test_unknown_flag_exits_2(checkpoint):
    result = CliRunner().invoke(cli, ["synth", "--bogus", "x"])
    assert result.exit_code == 2


def test_missing_checkpoint_exits_2(scene_file):
    result = CliRunner().invoke(cli, [
        "synth", "--scene", scene_file, "--checkpoint", "/nonexistent.pt",
    ])
    assert result.exit_code == 2


def test_train_tiny_run(tmp_path):
    from panosynth.config import RunConfig

    cfg = RunConfig(resolution=16, steps=2, batch_size=2, dataset_size=4,
                    latent_dim=8, stem_width=8, checkpoint_every=2)
    cfg_path = tmp_path / "run.json"
    cfg.save(cfg_path)
    out = tmp_path / "train"
    result = CliRunner().invoke(cli, [
        "train", "--config", str(cfg_path), "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert (out / "model.pt").exists()
    with open(out / "losses.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2


def test_entrypoint_error_exit_codes(scene_file, tmp_path):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "panosynth.cli", "nonsense-command"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
