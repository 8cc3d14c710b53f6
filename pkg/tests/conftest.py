import numpy as np
import pytest

from windsr.gaussian import default_testbed, oracle_denoiser
from windsr.schedule import make_schedule


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture(scope="session")
def testbed():
    return default_testbed()


@pytest.fixture(scope="session")
def testbed_denoiser(testbed, sched):
    return oracle_denoiser(testbed, sched)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
