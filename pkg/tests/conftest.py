import numpy as np
import pytest

from symcrit import grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def square_small():
    return grid.build_domain("square", side=2.0, resolution=5)


@pytest.fixture(scope="session")
def disk_small():
    return grid.build_domain("disk-polar", radius=3.0, resolution=4,
                             angular_resolution=8)


@pytest.fixture(scope="session")
def annulus_small():
    return grid.build_domain("annulus-polar", inner_radius=1.0,
                             outer_radius=3.0, resolution=4,
                             angular_resolution=8)


@pytest.fixture(scope="session")
def ball_small():
    return grid.build_domain("radial-ball-1d", dimension=3, radius=10.0,
                             resolution=50)


def random_function(domain, rng, scale=1.0):
    """Random interior values, zero boundary."""
    vals = scale * rng.standard_normal(domain.n_nodes)
    vals[domain.boundary] = 0.0
    return grid.GridFunction(domain, vals)
