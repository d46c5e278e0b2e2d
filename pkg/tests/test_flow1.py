import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from closedloop.errors import DomainViolation, EquilibriumMismatch, StepTooLarge
from closedloop.flow1 import Trajectory, check_speed_bounds, integrate_smi, w1_decay_report, write_trajectory_csv
from closedloop.scenarios import affine_dirac, projected_quadratic

X_BAR = 2.0 / 3.0


@pytest.fixture
def affine_traj(affine):
    # (mu - beta tau)(T - t0) = 1.5 * 7 >= 10
    return integrate_smi(affine, [0.0], t0=1.0, T=8.0, h=1e-3)


def test_trajectory_matches_closed_form(affine_traj):
    exact = X_BAR - X_BAR * np.exp(-1.5 * (affine_traj.times - 1.0))
    assert_allclose(affine_traj.states[:, 0], exact, atol=1e-10)
    assert affine_traj.meta["solver"] == "rk4"


def test_speed_bound_rate_one_holds(affine, affine_traj):
    report = check_speed_bounds(affine_traj, [X_BAR], affine, rate_multiplier=1.0)
    assert report.satisfied
    assert report.max_violation <= 1e-6
    assert report.fitted_rate == pytest.approx(1.5, rel=0.01)


def test_speed_bound_rate_two_is_violated(affine, affine_traj):
    report = check_speed_bounds(affine_traj, [X_BAR], affine, rate_multiplier=2.0)
    assert not report.satisfied
    assert report.max_violation > 1e-6


def test_w1_decay_is_exactly_tau_times_distance(affine, affine_traj):
    series = w1_decay_report(affine_traj, affine, [X_BAR])
    expected = 0.5 * np.abs(affine_traj.states[:, 0] - X_BAR)
    assert np.max(np.abs(series.values - expected)) <= 1e-12
    assert np.all(np.diff(series.values) <= 1e-15)


def test_wrong_equilibrium_is_detected(affine, affine_traj):
    with pytest.raises(EquilibriumMismatch):
        check_speed_bounds(affine_traj, [0.3], affine)


def test_uniform_modulus_envelope():
    problem = affine_dirac(mu=2.0, epsilon=0.5, uniform=True, a_ref=1.0)
    traj = integrate_smi(problem, [0.0], t0=1.0, T=4.0, h=1e-3)
    report = check_speed_bounds(traj, [X_BAR], problem)
    # phi(t) = 2t gives theta^{-1}(s) = exp(-1.5 s): the envelope is the trajectory itself
    assert report.satisfied
    assert_allclose(report.envelope.values, report.observed.values, atol=1e-7)


def test_frozen_form_with_full_gap_reproduces_closed_loop(affine, affine_traj):
    frozen = integrate_smi(affine, [0.0], t0=1.0, T=8.0, h=1e-3, frozen_at=[X_BAR], gap_scale=1.0)
    assert np.max(np.abs(frozen.states - affine_traj.states)) <= 1e-10


def test_frozen_form_without_gap_decays_at_mu(affine):
    traj = integrate_smi(affine, [0.0], t0=1.0, T=3.0, h=1e-3, frozen_at=[X_BAR], gap_scale=0.0)
    exact = X_BAR - X_BAR * np.exp(-2.0 * (traj.times - 1.0))
    assert_allclose(traj.states[:, 0], exact, atol=1e-10)


def test_step_and_domain_errors(affine):
    with pytest.raises(StepTooLarge):
        integrate_smi(affine, [0.0], t0=1.0, T=2.0, h=0.3)
    with pytest.raises(ValueError):
        integrate_smi(affine, [0.0], t0=0.0, T=2.0, h=1e-3)
    with pytest.raises(DomainViolation):
        integrate_smi(projected_quadratic(mu=1.0), [-1.0], t0=1.0, T=2.0, h=1e-2)


def test_forward_backward_on_projected_problem():
    problem = projected_quadratic(mu=1.0, c=1.0)
    traj = integrate_smi(problem, [2.0], t0=1.0, T=6.0, h=1e-2)
    assert traj.meta["solver"] == "forward-backward"
    assert np.all(traj.states >= 0.0)
    assert traj.states[-1, 0] == 0.0


def test_csv_output(tmp_path, affine, affine_traj):
    path = tmp_path / "traj.csv"
    distance = np.abs(affine_traj.states[:, 0] - X_BAR)
    write_trajectory_csv(affine_traj, path, {"distance": distance})
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "x_0", "distance"]
    assert len(rows) == len(affine_traj) + 1
    assert float(rows[-1][0]) == 8.0
    assert float(rows[1][1]) == 0.0
    with pytest.raises(ValueError):
        write_trajectory_csv(affine_traj, path, {"bad": [1.0]})


def test_start_at_equilibrium(affine):
    traj = integrate_smi(affine, [X_BAR], t0=1.0, T=2.0, h=1e-3)
    report = check_speed_bounds(traj, [X_BAR], affine)
    assert report.satisfied
    assert report.max_violation <= 1e-12


def test_drift_away_from_equilibrium_is_a_violation(affine):
    times = np.linspace(1.0, 2.0, 11)
    drifting = Trajectory(times=times, states=(X_BAR + 0.01 * (times - 1.0))[:, None])
    report = check_speed_bounds(drifting, [X_BAR], affine)
    assert not report.satisfied
    assert report.max_violation == pytest.approx(0.01)
    assert np.all(report.envelope.values == 0.0)
