import numpy as np
import pytest

from notchlab import synth
from notchlab.data import default_schema


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def small_portfolio():
    """1200 synthetic records with ground truth; shared read-only."""
    return synth.generate(synth.GeneratorConfig(n=1200, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
