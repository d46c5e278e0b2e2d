"""
Operator oracles for closed-loop monotone inclusions.

A maximal monotone part A is carried by its resolvent J_{lam A} = (Id + lam A)^{-1}, optionally with a
single-valued forward evaluation. The random field B(x, xi) is averaged against a distribution to give
B_m(x); the closed-loop operator is F_{m_x} = A + B_{m_x}.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from closedloop.distmap import DecisionMap, Distribution, expect_vector
from closedloop.errors import (
    ForwardUnavailable,
    ModulusGapViolated,
    NoProbes,
    PotentialUnavailable,
    TargetUnreachable,
    ToleranceNotReached,
)
from closedloop.numerics import adaptive_quad, as_vector, invert_monotone

logger = logging.getLogger(__name__)

THETA_TOL = 1e-11
THETA_GAP_PROBES = 64


def _anywhere(x: np.ndarray) -> bool:
    return True


@dataclass(frozen=True)
class MonotoneOracle:
    resolvent: Callable[[float, np.ndarray], np.ndarray]
    forward: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mu_A: float = 0.0
    domain_check: Callable[[np.ndarray], bool] = _anywhere
    value: Optional[Callable[[np.ndarray], float]] = None
    lipschitz: float = 0.0
    name: str = ""

    @property
    def smooth(self) -> bool:
        return self.forward is not None

    def apply_resolvent(self, lam: float, v) -> np.ndarray:
        if lam <= 0:
            raise ValueError("resolvent parameter must be positive")
        return as_vector(self.resolvent(lam, as_vector(v)))

    def apply_forward(self, x) -> np.ndarray:
        if self.forward is None:
            raise ForwardUnavailable(f"operator {self.name or 'A'} has no single-valued evaluation")
        return as_vector(self.forward(as_vector(x)))


def zero_operator(name: str = "zero") -> MonotoneOracle:
    return MonotoneOracle(
        resolvent=lambda lam, v: v,
        forward=lambda x: np.zeros_like(x),
        value=lambda x: 0.0,
        name=name,
    )


def linear_operator(M, name: str = "linear") -> MonotoneOracle:
    """A(x) = Mx for a monotone matrix M (positive semidefinite symmetric part)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    sym = 0.5 * (M + M.T)
    eig_min = float(np.linalg.eigvalsh(sym).min())
    if eig_min < -1e-12:
        raise ValueError(f"matrix is not monotone (min eigenvalue of symmetric part {eig_min})")
    identity = np.eye(len(M))
    symmetric = np.allclose(M, M.T)
    return MonotoneOracle(
        resolvent=lambda lam, v: np.linalg.solve(identity + lam * M, v),
        forward=lambda x: M @ x,
        mu_A=max(0.0, eig_min),
        value=(lambda x: 0.5 * float(x @ M @ x)) if symmetric else None,
        lipschitz=float(np.linalg.norm(M, 2)),
        name=name,
    )


def gradient_operator(
    grad: Callable[[np.ndarray], np.ndarray],
    value: Optional[Callable[[np.ndarray], float]] = None,
    lipschitz: float = 0.0,
    mu: float = 0.0,
    name: str = "gradient",
) -> MonotoneOracle:
    """A = grad g for a smooth convex g; the resolvent solves u + lam grad(u) = v."""

    def resolvent(lam: float, v: np.ndarray) -> np.ndarray:
        sol = optimize.root(lambda u: u + lam * np.asarray(grad(u), dtype=float) - v, v, tol=1e-14)
        if not sol.success:
            raise ToleranceNotReached(f"resolvent solve failed: {sol.message}")
        return sol.x

    return MonotoneOracle(
        resolvent=resolvent, forward=grad, mu_A=mu, value=value, lipschitz=lipschitz, name=name
    )


def normal_cone_box(lo, hi, name: str = "box") -> MonotoneOracle:
    """Normal cone of the box [lo, hi]; its resolvent is the projection."""
    lo_arr, hi_arr = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if np.any(lo_arr > hi_arr):
        raise ValueError("empty box")

    def inside(x: np.ndarray) -> bool:
        return bool(np.all(x >= lo_arr - 1e-12) and np.all(x <= hi_arr + 1e-12))

    return MonotoneOracle(
        resolvent=lambda lam, v: np.clip(v, lo_arr, hi_arr),
        domain_check=inside,
        value=lambda x: 0.0 if inside(x) else np.inf,
        name=name,
    )


@dataclass(frozen=True)
class RandomField:
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    beta: float
    lipschitz_L: float

    def __post_init__(self):
        if self.beta <= 0 or self.lipschitz_L <= 0:
            raise ValueError("beta and lipschitz_L must be positive")


@dataclass(frozen=True)
class UniformModulus:
    phi: Callable[[float], float]
    a_ref: float

    def __post_init__(self):
        if self.a_ref <= 0:
            raise ValueError("a_ref must be positive")


@dataclass(frozen=True)
class ClosedLoopProblem:
    A: MonotoneOracle
    B: RandomField
    map: DecisionMap
    mu: Optional[float] = None
    modulus: Optional[UniformModulus] = None
    quad_points: int = 32
    f_value: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    name: str = field(default="")

    def __post_init__(self):
        if self.mu is None and self.modulus is None:
            raise ValueError("need a strong-monotonicity modulus mu or a uniform modulus")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive")

    @property
    def beta_tau(self) -> float:
        return self.B.beta * self.map.tau

    @property
    def rho(self) -> float:
        """beta*tau/mu; infinite when only a uniform modulus is declared."""
        if self.mu is None:
            return float("inf")
        return self.beta_tau / self.mu

    @property
    def lipschitz(self) -> float:
        return self.B.lipschitz_L


def b_m(problem: ClosedLoopProblem, m: Distribution, x) -> np.ndarray:
    """B_m(x) = E_{xi ~ m} B(x, xi)."""
    x = as_vector(x)
    return expect_vector(m, lambda xi: problem.B.eval(x, xi), problem.quad_points)


def frozen_field(problem: ClosedLoopProblem, m: Distribution, x) -> np.ndarray:
    """F_m(x) = A(x) + B_m(x) with the distribution held fixed."""
    return problem.A.apply_forward(x) + b_m(problem, m, x)


def closed_loop_field(problem: ClosedLoopProblem, x) -> np.ndarray:
    x = as_vector(x)
    return problem.A.apply_forward(x) + b_m(problem, problem.map(x), x)


def gap_e(problem: ClosedLoopProblem, x_bar, x) -> np.ndarray:
    """e_xbar(x) = B_{m_x}(x) - B_{m_xbar}(x); exactly zero at x = x_bar."""
    x, x_bar = as_vector(x), as_vector(x_bar)
    if np.array_equal(x, x_bar):
        return np.zeros_like(x)
    return b_m(problem, problem.map(x), x) - b_m(problem, problem.map(x_bar), x)


def verify_gap_lipschitz(problem: ClosedLoopProblem, x_bar, probes: Sequence[Tuple]) -> float:
    """Largest observed ||e(x) - e(z)|| / ||x - z||, compared against 2L + beta*tau."""
    best = None
    for x, z in probes:
        x, z = as_vector(x), as_vector(z)
        dist = float(np.linalg.norm(x - z))
        if dist == 0.0:
            continue
        ratio = float(np.linalg.norm(gap_e(problem, x_bar, x) - gap_e(problem, x_bar, z))) / dist
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise NoProbes("no distinct probe pairs")
    bound = 2.0 * problem.lipschitz + problem.beta_tau
    if best > bound + 1e-9:
        logger.warning("[OPS] gap Lipschitz ratio %.6g exceeds 2L + beta*tau = %.6g", best, bound)
    return best


def potential(problem: ClosedLoopProblem, m: Distribution, x) -> float:
    """G_m(x) = g(x) + E_{xi ~ m} f(x, xi)."""
    if problem.A.value is None or problem.f_value is None:
        raise PotentialUnavailable(f"problem {problem.name!r} does not expose potential values")
    x = as_vector(x)
    expected = expect_vector(m, lambda xi: problem.f_value(x, xi), problem.quad_points)
    return float(problem.A.value(x)) + float(expected[0])


# ------------------------------------------------------- uniform modulus


def theta(modulus: UniformModulus, beta_tau: float, z: float, tol: float = THETA_TOL) -> float:
    """
    theta(z) = integral over [z, a_ref] of ds / (phi(s) - beta_tau * s).

    The integral is taken in the variable u = log s, which keeps the integrand bounded as z -> 0
    for moduli that are linear near the origin.
    """
    if beta_tau < 0:
        raise ValueError("beta_tau must be nonnegative")
    a = modulus.a_ref
    if not 0 < z <= a:
        raise ValueError(f"z must lie in (0, {a}], got {z}")
    if z == a:
        return 0.0

    def gap(s: float) -> float:
        return modulus.phi(s) - beta_tau * s

    probes = np.geomspace(z, a, THETA_GAP_PROBES)
    bad = [s for s in probes if not gap(s) > 0]
    if bad:
        raise ModulusGapViolated(f"phi(s) - beta_tau*s <= 0 at s = {bad[0]:.6g}")

    def integrand(u: float) -> float:
        s = np.exp(u)
        g = gap(s)
        if g <= 0:
            raise ModulusGapViolated(f"phi(s) - beta_tau*s <= 0 at s = {s:.6g}")
        return s / g

    return adaptive_quad(integrand, float(np.log(z)), float(np.log(a)), tol)


def theta_inv(
    modulus: UniformModulus,
    beta_tau: float,
    s: float,
    tol: float = 1e-9,
    max_halvings: int = 200,
) -> float:
    """Inverse of theta: the z in (0, a_ref] with theta(z) = s."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    a = modulus.a_ref
    if s == 0:
        return a
    z_lo = 0.5 * a
    for _ in range(max_halvings):
        if theta(modulus, beta_tau, z_lo) > s:
            break
        z_lo *= 0.5
    else:
        raise TargetUnreachable(f"theta stays below {s} down to z = {z_lo:.3g}")
    u = invert_monotone(
        lambda u: theta(modulus, beta_tau, min(a, float(np.exp(u)))),
        s,
        (float(np.log(z_lo)), float(np.log(a))),
        tol,
    )
    return min(a, float(np.exp(u)))


# -------------------------------------------------------- sampled checks


def check_firmly_nonexpansive(A: MonotoneOracle, probes: Sequence[Tuple], lam: float = 1.0, tol: float = 1e-9) -> bool:
    for v, w in probes:
        jv, jw = A.apply_resolvent(lam, v), A.apply_resolvent(lam, w)
        diff = jv - jw
        if diff @ diff > diff @ (as_vector(v) - as_vector(w)) + tol:
            logger.warning("[OPS] resolvent of %s is not firmly nonexpansive at %s, %s", A.name, v, w)
            return False
    return True


def check_resolvent_consistency(A: MonotoneOracle, points: Sequence, lam: float = 1.0, tol: float = 1e-9) -> bool:
    """v = J_{lam A}(v + lam A(v)) on every sampled point."""
    for v in points:
        v = as_vector(v)
        back = A.apply_resolvent(lam, v + lam * A.apply_forward(v))
        if np.linalg.norm(back - v) > tol:
            logger.warning("[OPS] resolvent and forward of %s disagree at %s", A.name, v)
            return False
    return True


def check_field_beta(B: RandomField, probes: Sequence[Tuple], tol: float = 1e-9) -> bool:
    """||B(x, xi) - B(x, zeta)|| <= beta ||xi - zeta|| on (x, xi, zeta) probes."""
    for x, xi, zeta in probes:
        x, xi, zeta = as_vector(x), as_vector(xi), as_vector(zeta)
        lhs = np.linalg.norm(as_vector(B.eval(x, xi)) - as_vector(B.eval(x, zeta)))
        if lhs > B.beta * np.linalg.norm(xi - zeta) + tol:
            logger.warning("[OPS] field is not %.6g-Lipschitz in xi at x = %s", B.beta, x)
            return False
    return True


def check_strong_monotonicity(problem: ClosedLoopProblem, m: Distribution, probes: Sequence[Tuple], tol: float = 1e-9) -> bool:
    if problem.mu is None:
        raise ValueError("problem declares no strong-monotonicity modulus")
    for x, y in probes:
        x, y = as_vector(x), as_vector(y)
        lhs = (frozen_field(problem, m, x) - frozen_field(problem, m, y)) @ (x - y)
        if lhs < problem.mu * float((x - y) @ (x - y)) - tol:
            logger.warning("[OPS] F_m is not %.6g-strongly monotone at %s, %s", problem.mu, x, y)
            return False
    return True
