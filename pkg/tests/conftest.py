import numpy as np
import pytest

from fracbsde import RegressionBasis, Regressor, make_grid, sample_paths


@pytest.fixture(scope="session")
def ens64():
    """N=64, P=1e4, one Brownian dimension on [0, 1]."""
    return sample_paths(make_grid(1.0, 64), 1, 10_000, seed=7)


@pytest.fixture(scope="session")
def basis2():
    return RegressionBasis(2)


@pytest.fixture(scope="session")
def reg64(ens64, basis2):
    return Regressor(ens64, basis2)


@pytest.fixture(scope="session")
def small_ens():
    return sample_paths(make_grid(1.0, 16), 1, 2000, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
