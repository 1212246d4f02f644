import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stmh.model import Problem

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def problem4():
    return Problem.build(4)


@pytest.fixture(scope="session")
def problem6():
    return Problem.build(6)


@pytest.fixture(scope="session")
def problem8():
    return Problem.build(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
