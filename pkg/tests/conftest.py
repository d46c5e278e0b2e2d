import numpy as np
import pytest

from closedloop.scenarios import affine_dirac, lazy_two_point, scalar_saddle


@pytest.fixture
def affine():
    """mu = 2, m_x = delta_{0.5x + 1}: x_bar = 2/3, rho = 0.25, rate mu - beta tau = 1.5."""
    return affine_dirac(mu=2.0, epsilon=0.5, theta0=1.0)


@pytest.fixture
def affine_soft():
    """mu = 2, m_x = delta_{0.2x + 1}: x_bar = 1/1.8."""
    return affine_dirac(mu=2.0, epsilon=0.2, theta0=1.0)


@pytest.fixture
def lazy_walk():
    return lazy_two_point(alpha=0.3)


@pytest.fixture
def saddle():
    return scalar_saddle(mu_p=2.0, mu_d=2.0, eps_p=0.2, eps_d=0.2, theta_p=1.0, theta_d=0.0, K=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
