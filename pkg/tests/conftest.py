import numpy as np
import pytest

from mhdlab import grid as g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def slab():
    return g.build_grid(8, 8, 9)


@pytest.fixture(scope="session")
def slab16():
    return g.build_grid(16, 16, 17)


@pytest.fixture(scope="session")
def torus():
    return g.build_grid(8, 8, 8, g.TORUS)
