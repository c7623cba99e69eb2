"""Shared fixtures: a small fixed taxonomy and tiny model configurations."""
import pytest
import torch

from panosynth.data import SynthShapesConfig
from panosynth.generator import GeneratorConfig
from panosynth.layout import LayoutConfig
from panosynth.pipeline import SynthesisModel
from panosynth.scene import Category, CategoryTaxonomy


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def taxonomy() -> CategoryTaxonomy:
    """2 stuff + 3 thing categories, the synthetic-shapes default."""
    return SynthShapesConfig().taxonomy()


@pytest.fixture(scope="session")
def mixed_taxonomy() -> CategoryTaxonomy:
    return CategoryTaxonomy(categories=(
        Category(0, "sky", "stuff"),
        Category(1, "grass", "stuff"),
        Category(2, "person", "thing"),
        Category(3, "car", "thing"),
    ))


def make_tiny_model(taxonomy, stages=1, latent_dim=8, mode="panoptic",
                    use_guided_filter=True, stem_width=16) -> SynthesisModel:
    """A minimal model (8x8 output at stages=1) for numeric tests."""
    torch.manual_seed(0)
    return SynthesisModel(
        taxonomy,
        LayoutConfig(latent_dim=latent_dim, label_embed_dim=4, mask_size=8),
        GeneratorConfig(latent_dim=latent_dim, stages=stages, stem_width=stem_width),
        mode=mode,
        use_guided_filter=use_guided_filter,
    )


@pytest.fixture
def tiny_model(taxonomy) -> SynthesisModel:
    return make_tiny_model(taxonomy)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per release criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if outcome == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1]
            rows.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, status in dict(rows).items():
            terminalreporter.write_line(f"{status}: {name}")
