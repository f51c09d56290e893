import pytest
from hypothesis import HealthCheck, settings

from s2flow.mesh import build_icosphere

settings.register_profile(
    "suite", deadline=None, derandomize=True, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def mesh_l2():
    return build_icosphere(2)


@pytest.fixture(scope="session")
def mesh_l3():
    return build_icosphere(3)


@pytest.fixture(scope="session")
def mesh_l4():
    return build_icosphere(4)


@pytest.fixture(scope="session")
def mesh_l5():
    return build_icosphere(5)


@pytest.fixture(scope="session")
def mesh_l6():
    return build_icosphere(6)
