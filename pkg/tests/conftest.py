import pytest

from sinhrates import ModelParams
from sinhrates.validation import hw_limit_model, smile_model


@pytest.fixture(scope="session")
def smile():
    return smile_model()


@pytest.fixture(scope="session")
def hw():
    return hw_limit_model()


@pytest.fixture(scope="session")
def deterministic():
    """sigma = 0 with a smile factor; every expectation is a path integral."""
    return ModelParams.constant(0.0, 0.15, 50.0, 0.0, horizon=12.0)
