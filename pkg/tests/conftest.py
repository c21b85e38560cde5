import numpy as np
import pytest

from millefeuille import ExpandingStructure, Sampler, Window


@pytest.fixture(scope="session")
def E12() -> ExpandingStructure:
    """Two 1-dim layers with exponents 1 and 2."""
    return ExpandingStructure.diagonal([(1.0, 1), (2.0, 1)])


@pytest.fixture(scope="session")
def E1() -> ExpandingStructure:
    return ExpandingStructure.diagonal([(1.0, 1)])


@pytest.fixture(scope="session")
def small_sampler() -> Sampler:
    return Sampler(seed=7, window=Window(10.0, -4, 4), count=400)


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(20260808)
