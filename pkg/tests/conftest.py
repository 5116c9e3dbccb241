import numpy as np
import pytest

from wradon.grids import make_ball_mask, make_sphere_grid, make_uniform_grid


@pytest.fixture(scope="session")
def grid16():
    return make_uniform_grid(16, 1.0)


@pytest.fixture(scope="session")
def mask16(grid16):
    return make_ball_mask(grid16)


@pytest.fixture(scope="session")
def sphere():
    return make_sphere_grid(16, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
