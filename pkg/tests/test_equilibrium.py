import pytest
from numpy.testing import assert_allclose

from closedloop.distmap import Dirac
from closedloop.equilibrium import (
    contraction_diagnostics,
    equilibrium_residual,
    repeated_minimization,
    solve_inner,
)
from closedloop.errors import MaxIterExceeded, NoContraction, TooFewIterates
from closedloop.scenarios import affine_dirac, affine_gaussian, projected_quadratic


def test_affine_equilibrium_and_ratios(affine):
    report = repeated_minimization(affine, [0.0], tol=1e-10)
    assert report.x_bar[0] == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert report.rho_declared == pytest.approx(0.25)
    assert report.converged
    assert report.residual < 1e-9
    # the first five iterates sit at distances >= 6e-4 from x_bar
    assert len(report.ratios) >= 5
    assert_allclose(report.ratios[:5], 0.25, atol=1e-8)


def test_constant_kernel_needs_one_solve():
    problem = affine_dirac(mu=2.0, epsilon=0.0, theta0=1.0)
    report = repeated_minimization(problem, [0.0], tol=1e-10)
    assert report.outer_iterations == 2
    assert report.iterates[1][0] == pytest.approx(0.5, abs=1e-10)
    assert report.ratios[0] < 1e-9


def test_start_at_equilibrium():
    problem = affine_dirac(mu=2.0, epsilon=0.0, theta0=1.0)
    report = repeated_minimization(problem, [0.5], tol=1e-10)
    assert len(report.iterates) == 1
    assert report.ratios == []
    assert report.x_bar[0] == 0.5


def test_no_contraction_without_modulus():
    problem = affine_dirac(mu=2.0, epsilon=2.5)
    with pytest.raises(NoContraction):
        repeated_minimization(problem, [0.0], tol=1e-8)


def test_uniform_modulus_still_converges():
    problem = affine_dirac(mu=2.0, epsilon=0.5, uniform=True)
    assert problem.rho == float("inf")
    report = repeated_minimization(problem, [0.0], tol=1e-11)
    assert report.x_bar[0] == pytest.approx(2.0 / 3.0, abs=1e-10)


def test_projected_equilibrium_sits_on_the_boundary():
    problem = projected_quadratic(mu=1.0, c=1.0)
    report = repeated_minimization(problem, [1.0], tol=1e-10)
    assert report.x_bar[0] == pytest.approx(0.0, abs=1e-12)
    assert equilibrium_residual(problem, report.x_bar) == pytest.approx(0.0, abs=1e-12)


def test_solve_inner(affine):
    m = Dirac([1.0])
    u = solve_inner(affine, m, [3.0], tol=1e-12)
    assert u[0] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(MaxIterExceeded) as excinfo:
        solve_inner(affine, m, [3.0], tol=1e-12, max_iter=2)
    assert excinfo.value.best is not None
    with pytest.raises(ValueError):
        solve_inner(affine, m, [3.0], tol=0.0)


def test_contraction_diagnostics():
    ratios = contraction_diagnostics([[1.0], [0.5], [0.25], [0.0]], [0.0])
    assert ratios == pytest.approx([0.5, 0.5, 0.0])
    with pytest.raises(TooFewIterates):
        contraction_diagnostics([[1.0]], [0.0])


def test_gaussian_family_equilibrium():
    problem = affine_gaussian(mu=2.0, epsilon=0.2, theta0=1.0, sigma=1.0)
    report = repeated_minimization(problem, [0.0], tol=1e-10)
    # E xi = 0.2 x + 1, so x_bar = 1 / 1.8
    assert report.x_bar[0] == pytest.approx(1.0 / 1.8, abs=1e-9)
    assert_allclose(report.ratios[:3], 0.1, atol=1e-6)


def test_residual_within_tol_for_stiff_field():
    # F(x) = 50 x - 1: a step bound of tol alone leaves ||F(x)|| about 50 times too large
    problem = affine_dirac(mu=100.0, epsilon=50.0, theta0=1.0)
    assert problem.rho == pytest.approx(0.5)
    report = repeated_minimization(problem, [0.0], tol=1e-6)
    assert report.converged
    assert report.residual <= 1e-6
    assert equilibrium_residual(problem, report.x_bar) == pytest.approx(report.residual)
    assert report.x_bar[0] == pytest.approx(0.02, abs=2e-8)


def test_outer_budget_exhausted_keeps_best_iterate():
    problem = affine_dirac(mu=100.0, epsilon=50.0, theta0=1.0)
    with pytest.raises(MaxIterExceeded) as excinfo:
        repeated_minimization(problem, [0.0], tol=1e-6, max_outer=3)
    best = excinfo.value.best
    assert best is not None
    assert 0.0 < best[0] < 0.02
