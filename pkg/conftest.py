"""
conftest.py - shared pytest fixtures.

Lives at the project root so `hem`, `utils`, `producers` and `consumers`
import as top-level packages during tests.
"""

import numpy as np
import pytest

from hem.qformer import EventMemoryModel


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_model() -> EventMemoryModel:
    """d=8, p=4, q=4, h=2: small enough for finite differences."""
    return EventMemoryModel.create(dim=8, num_patches=4, num_queries=4, heads=2, seed=7)


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch):
    """Keep HEM_* settings from a developer .env out of the tests."""
    for key in (
        "HEM_EVENTS",
        "HEM_SOURCE",
        "HEM_SCHEME",
        "HEM_GLOBAL_MEMORY_CAP",
        "HEM_SEED",
        "HEM_DIM",
        "HEM_PATCHES",
        "HEM_QUERIES",
        "HEM_HEADS",
        "HEM_CLASSES",
        "HEM_OUTPUT_DIR",
    ):
        monkeypatch.delenv(key, raising=False)
