import numpy as np
import pytest

from compsim.config import ScenarioConfig, with_overrides


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def small_cfg():
    return with_overrides(ScenarioConfig(), {"n_users": 3, "n_slots": 20})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
