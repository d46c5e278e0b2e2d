import numpy as np
import pytest
from numpy.testing import assert_allclose

from closedloop.curvature import (
    RandomWalkSpace,
    convolve,
    invariant_measure,
    nstep,
    ricci_global,
    ricci_kappa,
    space_from_dict,
    space_from_graph,
    tau_kappa_table,
    verify_contraction,
    w1_measures,
)
from closedloop.errors import DimensionMismatch, EqualMeasures, InvalidSpace, NoConvergence, SamePoint
from closedloop.scenarios import cycle_walk


def random_positive_space(rng, n=5, alpha=0.7):
    """Distances in [1, 2] (always a metric) with a lazy kernel; redrawn until kappa > 0."""
    for _ in range(100):
        upper = np.triu(rng.uniform(1.0, 2.0, size=(n, n)), 1)
        metric = upper + upper.T
        kernel = alpha * np.eye(n) + (1.0 - alpha) * rng.dirichlet(np.ones(n), size=n)
        space = RandomWalkSpace(points=list(range(n)), metric=metric, kernel=kernel)
        if ricci_global(space) > 0:
            return space
    raise AssertionError("no positively curved space drawn")


def test_lazy_two_point_walk(lazy_walk):
    assert ricci_kappa(lazy_walk, 0, 1) == pytest.approx(0.6, abs=1e-12)
    inv = invariant_measure(lazy_walk)
    assert_allclose(inv.upsilon, [0.5, 0.5], atol=1e-12)
    assert inv.residual <= 1e-12
    assert inv.rate_ok


def test_cycles():
    assert ricci_global(cycle_walk(3)) == pytest.approx(0.5, abs=1e-12)
    record = tau_kappa_table(cycle_walk(4))
    assert record.kappa == pytest.approx(0.0, abs=1e-12)
    assert record.regime == "tau = 1, kappa = 0"


def test_tau_kappa_identity(lazy_walk, rng):
    record = tau_kappa_table(lazy_walk)
    assert record.tau_hat == pytest.approx(0.4, abs=1e-12)
    assert record.identity_ok and record.bounds_ok
    assert record.regime == "tau < 1, kappa > 0"
    space = random_positive_space(rng)
    record = tau_kappa_table(space)
    assert abs(record.kappa + record.tau_hat - 1.0) <= 1e-12


def test_contraction_on_random_spaces(rng):
    for _ in range(5):
        space = random_positive_space(rng)
        for _ in range(20):
            nu1, nu2 = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
            check = verify_contraction(space, nu1, nu2)
            assert check.ok, (check.lhs, check.rhs)


def test_geometric_decay_towards_invariant_measure(rng):
    space = random_positive_space(rng)
    kappa = ricci_global(space)
    inv = invariant_measure(space, tol=1e-13)
    assert inv.rate_ok
    dists = [w1_measures(space, nstep(space, 0, n), inv.upsilon) for n in range(40)]
    for d_now, d_next in zip(dists, dists[1:]):
        if d_now > 1e-8:
            assert d_next <= (1.0 - kappa) * d_now + 1e-10


def test_invariant_measure_is_fixed(rng):
    space = random_positive_space(rng)
    inv = invariant_measure(space)
    assert_allclose(convolve(inv.upsilon, space), inv.upsilon, atol=1e-10)
    assert inv.upsilon.sum() == pytest.approx(1.0)


def test_periodic_walk_does_not_converge():
    space = space_from_graph([[0, 1], [1, 2]], walk="simple")
    with pytest.raises(NoConvergence):
        invariant_measure(space, max_iter=50)


def test_space_from_graph():
    space = space_from_graph([[0, 1, 1.0], [1, 2, 2.0]], walk="lazy", alpha=0.5)
    assert_allclose(space.metric[0], [0.0, 1.0, 3.0])
    assert_allclose(space.kernel[1], [0.25, 0.5, 0.25])
    assert_allclose(nstep(space, 0, 0), [1.0, 0.0, 0.0])
    assert_allclose(nstep(space, 0, 1), space.kernel[0])


def test_space_from_dict():
    space = space_from_dict({"metric": [[0, 1], [1, 0]], "kernel": [[0.3, 0.7], [0.7, 0.3]]})
    assert ricci_global(space) == pytest.approx(0.6)
    with pytest.raises(InvalidSpace):
        space_from_dict({"metric": [[0, 1], [1, 0]]})


def test_invalid_spaces():
    with pytest.raises(InvalidSpace):
        RandomWalkSpace([0, 1], [[0.0, 1.0], [2.0, 0.0]], np.eye(2))
    with pytest.raises(InvalidSpace):
        RandomWalkSpace([0, 1, 2], [[0, 1, 3], [1, 0, 1], [3, 1, 0]], np.eye(3))
    with pytest.raises(InvalidSpace):
        RandomWalkSpace([0, 1], [[0.0, 1.0], [1.0, 0.0]], [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvalidSpace):
        space_from_graph([[0, 1], [2, 3]])


def test_argument_errors(lazy_walk):
    with pytest.raises(SamePoint):
        ricci_kappa(lazy_walk, 1, 1)
    with pytest.raises(DimensionMismatch):
        convolve([1.0, 0.0, 0.0], lazy_walk)
    with pytest.raises(EqualMeasures):
        verify_contraction(lazy_walk, [0.2, 0.8], [0.2, 0.8])


def test_point_indices_are_range_checked(lazy_walk):
    for bad in (-1, 2):
        with pytest.raises(DimensionMismatch):
            ricci_kappa(lazy_walk, 0, bad)
        with pytest.raises(DimensionMismatch):
            nstep(lazy_walk, bad, 1)
    with pytest.raises(DimensionMismatch):
        ricci_kappa(lazy_walk, 0.0, 1)
    assert ricci_kappa(lazy_walk, np.int64(1), 0) == pytest.approx(0.6, abs=1e-12)
