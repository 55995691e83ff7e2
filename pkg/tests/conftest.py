import numpy as np
import pytest
from hypothesis import settings

from gridhmc.models import build_model, generate_synthetic

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def logistic_model():
    return build_model(generate_synthetic("logistic", 100, 1))


@pytest.fixture(scope="session")
def banana_model():
    return build_model(generate_synthetic("banana", 100, 1))


@pytest.fixture(scope="session")
def gp_model():
    return build_model(generate_synthetic("gp", 40, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
