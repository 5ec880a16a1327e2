import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ideal_toa.fields import Grid
from ideal_toa.oracles import GaussianParams, wave_on_grid

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_grid():
    return Grid(-20.0, 801, 10.0)


@pytest.fixture
def rightward(small_grid):
    return wave_on_grid(GaussianParams(-8.0, 1.0, 2.0), small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)
