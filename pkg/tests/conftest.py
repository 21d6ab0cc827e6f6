import numpy as np
import pytest

from reliefsdf.fixtures import cube, icosphere
from reliefsdf.geometry import Camera
from reliefsdf.sdf import MeshSdf


@pytest.fixture(scope="session")
def sphere_mesh():
    return icosphere()


@pytest.fixture(scope="session")
def cube_mesh():
    return cube()


@pytest.fixture(scope="session")
def sphere_sdf(sphere_mesh):
    return MeshSdf(sphere_mesh)


@pytest.fixture(scope="session")
def cube_sdf(cube_mesh):
    return MeshSdf(cube_mesh)


@pytest.fixture(scope="session")
def cam():
    return Camera.front_on()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
