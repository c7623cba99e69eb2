"""Layout-to-image generator: shapes, output range, modes, differentiability."""
import numpy as np
import pytest
import torch

from panosynth.errors import LatentDimMismatch, ShapeMismatch
from panosynth.generator import GeneratorConfig, ImageGenerator, LayoutBundle
from panosynth.layout import InstanceLayout, StuffLayout, empty_instance_layout
from panosynth.scene import ObjectSpec

from conftest import make_tiny_model


def simple_bundle(num_stuff=2, n_things=1, size=16, dtype=torch.float32, seed=0):
    gen = torch.Generator().manual_seed(seed)
    logits = torch.randn(num_stuff, size, size, generator=gen).to(dtype)
    probs = torch.softmax(logits, dim=0)
    stuff = StuffLayout(masks=probs, active=tuple(range(num_stuff)))
    if n_things:
        masks = torch.zeros(n_things, size, size, dtype=dtype)
        for i in range(n_things):
            masks[i, 2 + i: 8 + i, 2: 8] = 0.9
        instances = InstanceLayout(masks=masks)
    else:
        instances = empty_instance_layout(size, size, dtype=dtype)
    return LayoutBundle(
        stuff=stuff, instances=instances, thing_channels=tuple(range(n_things))
    )


class TestConfig:
    def test_resolution_arithmetic(self):
        for stages, side in ((1, 8), (2, 16), (4, 64), (5, 128), (6, 256)):
            assert GeneratorConfig(stages=stages).output_size == side

    def test_width_progression(self):
        cfg = GeneratorConfig(stages=5, stem_width=128)
        assert cfg.stage_widths() == (64, 32, 16, 16, 16)

    def test_explicit_widths_validated(self):
        with pytest.raises(ShapeMismatch):
            GeneratorConfig(stages=3, widths=(8, 8)).stage_widths()


class TestForward:
    def test_output_shape_and_range_128(self):
        torch.manual_seed(0)
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=5, stem_width=16))
        out = g([simple_bundle(size=128)], torch.randn(1, 8))
        assert out.shape == (1, 3, 128, 128)
        assert out.min() >= -1 and out.max() <= 1

    def test_latents_change_image(self):
        torch.manual_seed(0)
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        g.eval()
        bundle = simple_bundle(size=16)
        gen = torch.Generator().manual_seed(1)
        z1 = torch.randn(1, 8, generator=gen)
        z2 = torch.randn(1, 8, generator=gen)
        a = g([bundle], z1)
        b = g([bundle], z2)
        assert (a - b).abs().max() > 0

    def test_deterministic(self):
        torch.manual_seed(0)
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        g.eval()
        bundle = simple_bundle(size=16)
        z = torch.randn(1, 8, generator=torch.Generator().manual_seed(2))
        assert torch.equal(g([bundle], z), g([bundle], z))

    def test_stuff_only_scene_runs(self):
        torch.manual_seed(0)
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        bundle = simple_bundle(size=16, n_things=0)
        out = g([bundle], torch.randn(1, 8))
        assert torch.isfinite(out).all()

    def test_latent_dim_mismatch(self):
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        with pytest.raises(LatentDimMismatch):
            g([simple_bundle(size=16)], torch.randn(1, 12))

    def test_batch_count_mismatch(self):
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        with pytest.raises(ShapeMismatch):
            g([simple_bundle(size=16)], torch.randn(2, 8))

    def test_modes_and_guided_filter_toggle(self):
        torch.manual_seed(0)
        g = ImageGenerator(2, 3, GeneratorConfig(latent_dim=8, stages=2, stem_width=16))
        bundle = simple_bundle(size=16)
        z = torch.randn(1, 8)
        for mode in ("panoptic", "stuff_only", "instance_only"):
            for gf in (True, False):
                out = g([bundle], z, mode=mode, use_guided_filter=gf)
                assert out.shape == (1, 3, 16, 16)
                assert torch.isfinite(out).all()


def test_gradient_wrt_latent_matches_finite_differences():
    torch.manual_seed(0)
    g = ImageGenerator(
        2, 2, GeneratorConfig(latent_dim=6, stages=2, stem_width=8)
    ).double()
    g.eval()
    bundle = simple_bundle(num_stuff=2, n_things=1, size=16, dtype=torch.float64)
    z = torch.randn(1, 6, dtype=torch.float64,
                    generator=torch.Generator().manual_seed(5))
    z.requires_grad_(True)

    def f(zv):
        return g([bundle], zv).mean()

    (grad,) = torch.autograd.grad(f(z), z)
    h = 1e-5
    for k in range(z.numel()):
        e = torch.zeros_like(z)
        e.reshape(-1)[k] = h
        with torch.no_grad():
            fd = (f(z + e) - f(z - e)) / (2 * h)
        a = grad.reshape(-1)[k].item()
        denom = max(abs(fd.item()), abs(a), 1e-8)
        assert abs(fd.item() - a) / denom < 1e-3
