import numpy as np
import pytest

from homolab.environment import EnvParams, sample_environment
from homolab.scales import ScaleParams, build_hierarchy


@pytest.fixture(scope="session")
def desk():
    return build_hierarchy(ScaleParams())


@pytest.fixture(scope="session")
def zero_env():
    return sample_environment(EnvParams(eta=0.0, mode="zero", seed=0))


@pytest.fixture(scope="session")
def full_env():
    return sample_environment(EnvParams(eta=0.05, mode="full", seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
