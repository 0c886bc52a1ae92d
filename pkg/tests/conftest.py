import numpy as np
import pytest

from radslab.grids import build_angular_quadrature, build_frequency_grid, build_slab_mesh
from radslab.planck import grey_constant


@pytest.fixture(scope="session")
def quad16():
    return build_angular_quadrature("slab_polar", 16)


@pytest.fixture(scope="session")
def quad_full():
    return build_angular_quadrature("full_sphere", 16)


@pytest.fixture(scope="session")
def grid64():
    return build_frequency_grid("multigroup", 0.05, 30.0, 64)


@pytest.fixture()
def grey_unit():
    return grey_constant(1.0, 0.5)


@pytest.fixture()
def mesh100():
    return build_slab_mesh(100)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
