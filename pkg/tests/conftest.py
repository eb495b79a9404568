from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from scenelattice.layout import LayoutMatrix, builtin_table

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def loveda():
    return builtin_table("loveda")


@pytest.fixture
def wild():
    return builtin_table("wild")


def random_layout(table, p=32, seed=0):
    rng = np.random.default_rng(seed)
    return LayoutMatrix(table, rng.integers(0, len(table.entries), size=(p, p)))


def blocky_layout(table, p=32, seed=0, block=4):
    """Random layout made of block x block patches (more realistic regions)."""
    rng = np.random.default_rng(seed)
    small = rng.integers(0, len(table.entries), size=(p // block, p // block))
    return LayoutMatrix(table, np.kron(small, np.ones((block, block), dtype=np.int64)))
