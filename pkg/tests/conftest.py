import pytest

from stopflow import (
    ConstantCost,
    GaussianSignal,
    ModelParams,
    PoissonSignal,
)

# shared benchmark instance: rho=1, l=1, h=9, mu=5, sigma=5, c_i=1,
# second stage either lambda=2 (Poisson) or sigma_tilde=1 (Gaussian), fee 1


@pytest.fixture
def params():
    return ModelParams(rho=1.0, sigma=5.0, h=9.0, l=1.0, mu=5.0)


@pytest.fixture
def cost():
    return ConstantCost(1.0)


@pytest.fixture
def poisson():
    return PoissonSignal(lam=2.0, r=1.0)


@pytest.fixture
def gaussian():
    return GaussianSignal(sigma_tilde=1.0, r=1.0)
