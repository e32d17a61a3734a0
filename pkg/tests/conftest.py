import numpy as np
import pytest

from scenemem.geometry import look_at
from scenemem.world import build_scene


@pytest.fixture(scope="session")
def room():
    return build_scene({"layout": "occluded-room", "seed": 0})


@pytest.fixture(scope="session")
def corridor():
    return build_scene({"layout": "corridor", "seed": 0})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def south_view():
    # south of the central wall, facing it
    return look_at((0.0, 0.0, -3.5), (0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def north_view():
    return look_at((0.0, 0.0, 3.5), (0.0, 0.0, 0.0))
