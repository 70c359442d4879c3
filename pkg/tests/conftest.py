import numpy as np
import pytest

from bmdenoise import synthetic


@pytest.fixture(scope="session")
def scene96() -> np.ndarray:
    return synthetic.make_scene(96, 96, seed=7).astype(np.float64)


@pytest.fixture(scope="session")
def scene64() -> np.ndarray:
    return synthetic.make_scene(64, 64, seed=11).astype(np.float64)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
