import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from convad import zoo


@pytest.fixture(scope="session")
def bright_square():
    graph, weights = zoo.make_bright_square_model(16)
    return graph, weights


@pytest.fixture(scope="session")
def small_models():
    return {kind: zoo.make_model(kind, seed=1) for kind in zoo.ARCHITECTURES}


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
