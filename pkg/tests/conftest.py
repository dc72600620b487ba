"""Shared fixtures: the frozen reference world under tests/fixtures/world."""

from pathlib import Path

import pytest

from abselect.backend import load_backend
from abselect.pipeline import Backends, RunConfig
from abselect.scoring import load_catalog

FIXTURES = Path(__file__).parent / "fixtures"
WORLD = FIXTURES / "world"


@pytest.fixture(scope="session")
def world_backends() -> Backends:
    return Backends(
        embedding=load_backend(WORLD / "models" / "embedding"),
        attention=load_backend(WORLD / "models" / "attention"),
    )


@pytest.fixture(scope="session")
def world_catalog():
    return load_catalog(WORLD / "catalog.json")


@pytest.fixture(scope="session")
def world_dataset() -> Path:
    return WORLD / "dataset"


@pytest.fixture()
def world_config() -> RunConfig:
    # must match scripts/make_fixtures.py exactly or golden comparisons drift
    return RunConfig(
        alpha=0.5, beta=0.9, k=5, n_crops=6, tau=0.01, seed=42,
        branches="both",
        paths={"models": "world/models", "catalog": "world/catalog.json",
               "dataset": "world/dataset"},
    )
