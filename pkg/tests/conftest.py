import numpy as np
import pytest

from aiba.domains import build_domain


@pytest.fixture(scope="session")
def rover():
    return build_domain("rover")


@pytest.fixture(scope="session")
def small_rover():
    return build_domain("rover", track_length=3, horizon=4)


@pytest.fixture(scope="session")
def firefighters():
    return build_domain("firefighters", horizon=3)


@pytest.fixture(scope="session")
def guess():
    return build_domain("guess")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
