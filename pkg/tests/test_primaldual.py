from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from closedloop.errors import ConditionViolated, NonSmoothA
from closedloop.operators import normal_cone_box
from closedloop.primaldual import (
    PDState,
    as_closed_loop_problem,
    check_pd_decay,
    check_spds_bounds,
    integrate_ispds,
    integrate_spds,
    lagrangian_gap,
    pd_equilibrium,
    pd_operator_T,
    velocity_decay,
)
from closedloop.scenarios import scalar_saddle

# 1.8 x + y = 1 and 1.8 y - x = 0
Z_BAR = np.linalg.solve([[1.8, 1.0], [-1.0, 1.8]], [1.0, 0.0])


def test_derived_constants(saddle):
    assert saddle.tilde_mu == 2.0
    assert saddle.tilde_rho == pytest.approx(0.1)
    assert saddle.K_norm == pytest.approx(1.0)
    assert (saddle.n_x, saddle.n_y) == (1, 1)


def test_saddle_equilibrium(saddle):
    report = pd_equilibrium(saddle, PDState([0.0], [0.0]), tol=1e-10)
    assert_allclose(report.x_bar, [0.42453, 0.23585], atol=1e-5)
    assert_allclose(report.x_bar, Z_BAR, atol=1e-9)
    assert report.extra["tilde_rho"] == pytest.approx(0.1)
    z_bar = report.extra["z_bar"]
    T = pd_operator_T(saddle, saddle.map_p(z_bar.x), saddle.map_d(z_bar.y), z_bar)
    assert_allclose(T.stack(), [0.0, 0.0], atol=1e-9)


def test_skew_block_rides_in_the_field(saddle):
    problem = as_closed_loop_problem(saddle)
    assert problem.lipschitz == pytest.approx(3.0)
    assert problem.rho == pytest.approx(0.1)
    assert_allclose(saddle.skew(np.array([1.0, 2.0])), [2.0, -1.0])


def test_lagrangian_gap_sandwich(saddle, rng):
    assert lagrangian_gap(saddle, Z_BAR, Z_BAR) == pytest.approx(0.0, abs=1e-14)
    for _ in range(20):
        z = Z_BAR + rng.normal(size=2)
        gap = lagrangian_gap(saddle, z, Z_BAR)
        assert gap >= 0.5 * saddle.tilde_mu * np.sum((z - Z_BAR) ** 2) - 1e-12


def test_spds_rate(saddle):
    traj = integrate_spds(saddle, [0.0, 0.0], t0=1.0, T=7.0, h=1e-3)
    report = check_spds_bounds(traj, saddle, Z_BAR)
    assert report.satisfied
    assert report.fitted_rate == pytest.approx(1.8, rel=0.01)


def test_ispds_lagrangian_decay(saddle):
    traj = integrate_ispds(saddle, [0.0, 0.0], [0.0, 0.0], t0=1.0, T=11.0, h=1e-3)
    report = check_pd_decay(traj, saddle, Z_BAR)
    assert report.satisfied
    assert report.max_violation <= 1e-6
    assert report.extra["sandwich_violation"] <= 1e-9
    assert_allclose(traj.states[-1], Z_BAR, atol=1e-3)

    decay = velocity_decay(traj)
    assert decay.series.values[0] == 0.0
    assert decay.fitted_rate is not None and decay.fitted_rate > 0


def test_ispds_condition_violated():
    instance = scalar_saddle(eps_p=0.8, eps_d=0.8)
    assert instance.tilde_rho > np.sqrt(2.0) / 4.0
    traj = integrate_ispds(instance, [0.0, 0.0], [0.0, 0.0], t0=1.0, T=1.1, h=1e-3)
    with pytest.raises(ConditionViolated):
        check_pd_decay(traj, instance, [0.0, 0.0])


def test_ispds_needs_smooth_g(saddle):
    boxed = replace(saddle, g=normal_cone_box(0.0, np.inf))
    with pytest.raises(NonSmoothA):
        integrate_ispds(boxed, [0.0, 0.0], [0.0, 0.0], t0=1.0, T=2.0, h=1e-3)


def test_boxed_saddle_equilibrium(saddle):
    boxed = replace(saddle, g=normal_cone_box(0.0, np.inf))
    # the unconstrained x_bar is already nonnegative
    report = pd_equilibrium(boxed, [1.0, 1.0], tol=1e-10)
    assert_allclose(report.x_bar, Z_BAR, atol=1e-9)
