import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from closedloop.errors import NonSmoothA, StepTooLarge
from closedloop.flow2 import (
    ISEHDConfig,
    check_damping_condition,
    check_lyapunov_decay,
    estimate_gradient_constant,
    gradient_integral_estimate,
    gradient_ratio,
    integrate_isehd,
    lyapunov_trace,
    w1_decay_report_2nd,
)
from closedloop.scenarios import affine_dirac, projected_quadratic

MU = 2.0
X_BAR = 5.0 / 9.0
SLOPE = 1.8  # F(x) = 1.8 x - 1 for mu = 2, eps = 0.2, theta0 = 1


def reference(times, omega, t0=1.0, x0=0.0, v0=0.0):
    """x(t) of x'' + (2 sqrt(mu) + 1.8 omega) x' + 1.8 (x - x_bar) = 0 by matrix exponential."""
    M = np.array([[0.0, 1.0], [-SLOPE, -(2.0 * np.sqrt(MU) + omega * SLOPE)]])
    s0 = np.array([x0 - X_BAR, v0])
    return np.array([X_BAR + (expm(M * (t - t0)) @ s0)[0] for t in times])


@pytest.fixture(scope="module")
def problem():
    return affine_dirac(mu=MU, epsilon=0.2, theta0=1.0)


@pytest.fixture(scope="module")
def config():
    return ISEHDConfig(omega=0.1, mu=MU, t0=1.0, T=11.0, h=1e-3)


@pytest.fixture(scope="module")
def traj(problem, config):
    return integrate_isehd(problem, [0.0], [0.0], config)


@pytest.fixture(scope="module")
def trace(traj, problem, config):
    return lyapunov_trace(traj, problem, [X_BAR], config)


def test_damping_condition_examples():
    ok, margins = check_damping_condition(mu=2.0, L=2.0, beta=1.0, tau=0.2, omega=0.1)
    assert ok
    assert margins["rho"] == pytest.approx(0.1)
    assert margins["rho_margin"] == pytest.approx(1.0 - 0.26)
    assert margins["omega_bound"] == pytest.approx(np.sqrt(2.0) / (2.0 * np.sqrt(2.0) * 4.2))

    ok, _ = check_damping_condition(mu=1.0, L=1.0, beta=1.0, tau=0.24, omega=0.0)
    assert ok

    ok, margins = check_damping_condition(mu=2.0, L=2.0, beta=1.0, tau=0.2, omega=0.2)
    assert not ok
    assert margins["omega_margin"] < 0


def test_xy_system_matches_matrix_exponential(traj):
    assert traj.meta["solver"] == "rk4-xy"
    assert traj.aux is not None
    assert_allclose(traj.states[:, 0], reference(traj.times, omega=0.1), atol=1e-6)


def test_direct_form_matches_matrix_exponential(problem):
    config = ISEHDConfig(omega=0.0, mu=MU, t0=1.0, T=11.0, h=1e-3)
    direct = integrate_isehd(problem, [0.0], [0.0], config)
    assert direct.meta["solver"] == "rk4-direct"
    assert_allclose(direct.states[:, 0], reference(direct.times, omega=0.0), atol=1e-6)


def test_velocities_reconstructed_from_first_equation(traj):
    # x' from the (x, y) system agrees with a centered difference of x
    h = traj.times[1] - traj.times[0]
    centered = (traj.states[2:, 0] - traj.states[:-2, 0]) / (2.0 * h)
    assert_allclose(traj.velocities[1:-1, 0], centered, atol=1e-5)
    assert traj.velocities[0, 0] == 0.0


def test_converges_to_equilibrium(problem):
    config = ISEHDConfig(omega=0.1, mu=MU, t0=1.0, T=20.0, h=1e-3)
    x_T = integrate_isehd(problem, [0.0], [0.0], config).states[-1, 0]
    assert x_T == pytest.approx(X_BAR, abs=1e-6)


def test_initial_energy(trace):
    # G(x) = x^2 - (10/9) x frozen at x_bar
    v = np.sqrt(MU) * (-X_BAR) + 0.1 * (-10.0 / 9.0)
    assert trace.V[0] == pytest.approx(25.0 / 81.0 + 0.5 * v * v, abs=1e-12)


def test_lyapunov_decay(trace):
    report = check_lyapunov_decay(trace, MU)
    assert report.satisfied
    weighted = np.exp(np.sqrt(MU) / 4.0 * (trace.times - trace.times[0])) * trace.V
    assert np.all(weighted <= trace.V[0] * (1.0 + 1e-6))
    assert report.extra["sandwich_violation"] <= 1e-9


def test_gradient_integral_stays_bounded(traj, problem):
    series = gradient_integral_estimate(traj, problem, [X_BAR], MU)
    ratio = gradient_ratio(series, MU).values
    half = len(ratio) // 2
    assert np.max(ratio[half:]) <= np.max(ratio[: half + 1])
    assert 0.0 < estimate_gradient_constant(series, MU) < np.inf


def test_w1_decay_second_order(traj, problem, trace):
    report = w1_decay_report_2nd(traj, problem, [X_BAR], float(trace.V[0]), MU)
    assert report.satisfied
    assert_allclose(report.observed.values, 0.2 * np.abs(traj.states[:, 0] - X_BAR), atol=1e-12)


def test_integrator_preconditions(problem):
    with pytest.raises(StepTooLarge):
        integrate_isehd(problem, [0.0], [0.0], ISEHDConfig(omega=0.1, mu=MU, t0=1.0, T=2.0, h=0.1))
    with pytest.raises(NonSmoothA):
        integrate_isehd(projected_quadratic(mu=1.0), [1.0], [0.0], ISEHDConfig(omega=0.1, mu=1.0, t0=1.0, T=2.0))
    with pytest.raises(ValueError):
        ISEHDConfig(omega=0.1, mu=MU, t0=0.0, T=2.0)


def test_default_step():
    assert ISEHDConfig(omega=0.1, mu=4.0, t0=1.0, T=2.0).h == pytest.approx(5e-4)
