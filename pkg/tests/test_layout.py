"""Layout generation: masked softmax, mask placement, coarse stuff squares,
and the learned instance/stuff branches."""
import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from panosynth.errors import (
    EmptyActiveSet,
    LengthMismatch,
    StuffObjectPassed,
    ThingObjectPassed,
)
from panosynth.layout import (
    BBox,
    LayoutConfig,
    PanopticLayoutGenerator,
    build_coarse_stuff_layout,
    mask2layout,
    masked_softmax,
)
from panosynth.scene import ObjectSpec

from conftest import make_tiny_model


class TestMaskedSoftmax:
    def test_equal_logits_split_evenly(self):
        logits = torch.zeros(3, 4, 4)
        out = masked_softmax(logits, active=(0, 2))
        assert torch.allclose(out.masks[0], torch.full((4, 4), 0.5))
        assert torch.allclose(out.masks[2], torch.full((4, 4), 0.5))
        assert (out.masks[1] == 0).all()

    def test_closed_form_two_channel(self):
        logits = torch.zeros(2, 1, 1)
        logits[1] = math.log(2.0)
        out = masked_softmax(logits, active=(0, 1))
        assert out.masks[0, 0, 0].item() == pytest.approx(1 / 3, abs=1e-6)
        assert out.masks[1, 0, 0].item() == pytest.approx(2 / 3, abs=1e-6)

    def test_inactive_channel_exactly_zero(self):
        logits = torch.zeros(3, 4, 4)
        logits[1] = 1e6  # huge logit on an inactive channel
        out = masked_softmax(logits, active=(0, 2))
        assert (out.masks[1] == 0).all()
        sums = out.masks[[0, 2]].sum(dim=0)
        assert torch.allclose(sums, torch.ones(4, 4), atol=1e-5)

    def test_shift_invariance(self):
        logits = torch.randn(4, 8, 8, dtype=torch.float64)
        base = masked_softmax(logits, active=(0, 1, 3)).masks
        shifted = masked_softmax(logits + 123.456, active=(0, 1, 3)).masks
        assert (base - shifted).abs().max() < 1e-6

    def test_large_logits_stable(self):
        logits = torch.full((2, 4, 4), 1e4)
        out = masked_softmax(logits, active=(0, 1))
        assert torch.isfinite(out.masks).all()

    def test_empty_active_set(self):
        with pytest.raises(EmptyActiveSet):
            masked_softmax(torch.zeros(2, 4, 4), active=())

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_sums_to_one_property(self, seed):
        gen = torch.Generator().manual_seed(seed)
        logits = torch.randn(5, 6, 6, generator=gen) * 10
        active = tuple(range(1 + seed % 5))
        out = masked_softmax(logits, active=active)
        sums = out.masks[list(active)].sum(dim=0)
        assert (sums - 1).abs().max() < 1e-5


class TestMask2Layout:
    def test_centered_block_oracle(self):
        mask = torch.ones(16, 16)
        out = mask2layout([BBox(0.5, 0.5, 0.5, 0.5)], [mask], 64, 64)
        expected = torch.zeros(64, 64)
        expected[16:48, 16:48] = 1.0
        assert torch.equal(out.masks[0], expected)

    def test_empty_lists(self):
        out = mask2layout([], [], 32, 32)
        assert out.masks.shape == (0, 32, 32)

    def test_bounded_by_source_max(self):
        gen = torch.Generator().manual_seed(1)
        mask = torch.rand(16, 16, generator=gen)
        out = mask2layout([BBox(0.4, 0.6, 0.7, 0.3)], [mask], 64, 64)
        assert out.masks.max() <= mask.max() + 1e-6
        assert out.masks.min() >= 0

    def test_support_inside_bbox_rect(self):
        mask = torch.ones(16, 16)
        box = BBox(0.3, 0.7, 0.4, 0.2)
        out = mask2layout([box], [mask], 64, 64)
        y0, x0, rh, rw = box.pixel_rect(64, 64)
        outside = out.masks[0].clone()
        outside[max(y0, 0): y0 + rh, max(x0, 0): x0 + rw] = 0
        assert (outside == 0).all()

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            mask2layout([BBox(0.5, 0.5, 0.5, 0.5)], [], 64, 64)

    def test_resampling_consistency(self):
        # placing a smooth mask then reading the rect back approximates it
        yy, xx = torch.meshgrid(
            torch.linspace(0, 1, 16), torch.linspace(0, 1, 16), indexing="ij"
        )
        mask = 0.5 + 0.4 * torch.sin(3 * xx) * torch.cos(2 * yy)
        box = BBox(0.5, 0.5, 0.5, 0.5)
        out = mask2layout([box], [mask], 64, 64)
        y0, x0, rh, rw = box.pixel_rect(64, 64)
        rect = out.masks[0][y0: y0 + rh, x0: x0 + rw]
        back = torch.nn.functional.interpolate(
            rect.reshape(1, 1, rh, rw), size=(16, 16), mode="area"
        )[0, 0]
        assert (back - mask).abs().mean() < 0.1


class TestCoarseStuff:
    def test_max_size_fills_canvas(self, mixed_taxonomy):
        obj = ObjectSpec(0, 0.5, 0.5, 25)
        out = build_coarse_stuff_layout([obj], mixed_taxonomy, 64, 64)
        assert (out.masks[0] == 1).all()
        assert out.active == (0,)

    def test_corner_clipping_quarter_area(self, mixed_taxonomy):
        # square centered at the origin: roughly a quarter survives clipping
        obj = ObjectSpec(0, 0.0, 0.0, 16)
        out = build_coarse_stuff_layout([obj], mixed_taxonomy, 64, 64)
        # independent integer-geometry oracle
        import numpy as np

        side = int(round(math.sqrt(16 / 25) * 64))
        y0 = x0 = int(round(0.0 - side / 2))
        oracle = np.zeros((64, 64), dtype=bool)
        oracle[max(y0, 0): y0 + side, max(x0, 0): x0 + side] = True
        assert (out.masks[0].numpy() > 0) .tolist() == oracle.tolist()
        ratio = out.masks[0].sum().item() / side ** 2
        assert 0.2 < ratio < 0.3
        assert out.masks[0, 0, 0] == 1

    def test_duplicate_category_union(self, mixed_taxonomy):
        a = ObjectSpec(0, 0.25, 0.25, 4)
        b = ObjectSpec(0, 0.75, 0.75, 4)
        out = build_coarse_stuff_layout([a, b], mixed_taxonomy, 64, 64)
        single_a = build_coarse_stuff_layout([a], mixed_taxonomy, 64, 64)
        single_b = build_coarse_stuff_layout([b], mixed_taxonomy, 64, 64)
        union = torch.maximum(single_a.masks, single_b.masks)
        assert torch.equal(out.masks, union)
        assert out.active == (0,)

    def test_thing_rejected(self, mixed_taxonomy):
        with pytest.raises(ThingObjectPassed):
            build_coarse_stuff_layout([ObjectSpec(2, 0.5, 0.5, 4)], mixed_taxonomy, 64, 64)


class TestInstanceBranch:
    def test_center_passthrough(self, tiny_model):
        plg = tiny_model.plg
        for seed in range(5):
            gen = torch.Generator().manual_seed(seed)
            z = torch.randn(8, generator=gen)
            obj = ObjectSpec(2, 0.3 + 0.1 * seed, 0.9 - 0.1 * seed, 4)
            box = plg.predict_bbox(obj, z)
            assert box.cx == obj.cx and box.cy == obj.cy

    def test_extents_squashed(self, tiny_model):
        plg = tiny_model.plg
        gen = torch.Generator().manual_seed(0)
        objs = [
            ObjectSpec(2 + i % 3, float(torch.rand(1, generator=gen)),
                       float(torch.rand(1, generator=gen)),
                       1 + i % 25)
            for i in range(200)
        ]
        zs = torch.randn(200, 8, generator=gen)
        hw = plg.predict_bbox_hw_batch(objs, zs)
        assert ((hw > 0) & (hw < 1)).all()

    def test_stuff_object_rejected(self, tiny_model):
        z = torch.zeros(8)
        with pytest.raises(StuffObjectPassed):
            tiny_model.plg.predict_bbox(ObjectSpec(0, 0.5, 0.5, 4), z)
        with pytest.raises(StuffObjectPassed):
            tiny_model.plg.predict_mask(ObjectSpec(0, 0.5, 0.5, 4), z)

    def test_mask_shape_range_determinism(self, tiny_model):
        plg = tiny_model.plg
        obj = ObjectSpec(3, 0.5, 0.5, 9)
        z = torch.randn(8, generator=torch.Generator().manual_seed(4))
        a = plg.predict_mask(obj, z)
        b = plg.predict_mask(obj, z)
        assert a.shape == (8, 8)
        assert (a >= 0).all() and (a <= 1).all()
        assert torch.equal(a, b)

    def test_different_latents_give_different_masks(self, tiny_model):
        plg = tiny_model.plg
        obj = ObjectSpec(3, 0.5, 0.5, 9)
        gen = torch.Generator().manual_seed(11)
        z1 = torch.randn(8, generator=gen)
        z2 = torch.randn(8, generator=gen)
        a = plg.predict_mask(obj, z1)
        b = plg.predict_mask(obj, z2)
        assert (a - b).abs().max() > 0


class TestStuffBranch:
    def test_refined_shape(self, tiny_model, taxonomy):
        objs = [ObjectSpec(0, 0.5, 0.25, 16), ObjectSpec(1, 0.5, 0.75, 16)]
        z = torch.randn(8, generator=torch.Generator().manual_seed(0))
        out = tiny_model.plg.stuff_layout(objs, z, 32, 32)
        assert out.masks.shape == (taxonomy.num_stuff, 32, 32)
        sums = out.masks[list(out.active)].sum(dim=0)
        assert (sums - 1).abs().max() < 1e-5

    def test_zero_coarse_input_finite(self, tiny_model, taxonomy):
        from panosynth.layout import CoarseStuffLayout

        coarse = CoarseStuffLayout(
            masks=torch.zeros(taxonomy.num_stuff, 8, 8), active=(0,)
        )
        z = torch.zeros(8)
        logits = tiny_model.plg.refine_stuff_layout(coarse, z)
        assert torch.isfinite(logits).all()

    def test_refiner_gradient_matches_finite_differences(self, taxonomy):
        model = make_tiny_model(taxonomy)
        plg = model.plg.double()
        objs = [ObjectSpec(0, 0.5, 0.3, 9), ObjectSpec(1, 0.4, 0.8, 4)]
        z = torch.randn(8, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(3))
        z.requires_grad_(True)

        def f(zv):
            out = plg.stuff_layout(objs, zv, 8, 8)
            return (out.masks * torch.linspace(
                0, 1, out.masks.numel(), dtype=torch.float64
            ).reshape(out.masks.shape)).sum()

        loss = f(z)
        (grad,) = torch.autograd.grad(loss, z)
        h = 1e-5
        for k in range(z.numel()):
            e = torch.zeros_like(z)
            e[k] = h
            with torch.no_grad():
                fd = (f(z + e) - f(z - e)) / (2 * h)
            denom = max(abs(fd.item()), abs(grad[k].item()), 1e-8)
            assert abs(fd.item() - grad[k].item()) / denom < 1e-3


def test_layout_generator_is_deterministic_module(taxonomy):
    torch.manual_seed(0)
    a = PanopticLayoutGenerator(taxonomy, LayoutConfig(latent_dim=8, mask_size=8))
    torch.manual_seed(0)
    b = PanopticLayoutGenerator(taxonomy, LayoutConfig(latent_dim=8, mask_size=8))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
