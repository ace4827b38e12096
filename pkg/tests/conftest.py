import numpy as np
import pytest

from artifactlab.taxonomy import default_taxonomy

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES
