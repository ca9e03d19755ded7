import numpy as np
import pytest

from diffquant.sde_engine import DiffusionSpec, ou_spec, simulate_ensemble, sin_sigma_spec, wiener_spec

DT = 2.0**-8


@pytest.fixture(scope="session")
def wiener_ens():
    return simulate_ensemble(wiener_spec(), 0.0, DT, 1.0, 40, seed=1)


@pytest.fixture(scope="session")
def sin_ens():
    return simulate_ensemble(sin_sigma_spec(), 0.0, DT, 1.0, 60, seed=2)


@pytest.fixture(scope="session")
def ou_ens():
    return simulate_ensemble(ou_spec(), 0.5, DT, 1.0, 40, seed=3)


@pytest.fixture(scope="session")
def const2_ens():
    return simulate_ensemble(DiffusionSpec.constant(2.0), 0.0, DT, 1.0, 30, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
