"""Equilibrium x_bar with 0 in F_{m_xbar}(x_bar) by repeated minimization (Picard on x -> zer F_{m_x})."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from closedloop.distmap import Distribution
from closedloop.errors import MaxIterExceeded, NoContraction, TooFewIterates
from closedloop.numerics import as_vector
from closedloop.operators import ClosedLoopProblem, b_m, closed_loop_field

logger = logging.getLogger(__name__)

INNER_TOL_FLOOR = 1e-14
NO_CONTRACTION_PATIENCE = 10
STOP_TIGHTEN = 0.1


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    x_bar: np.ndarray
    iterates: List[np.ndarray]
    ratios: List[float]
    rho_declared: float
    residual: float
    outer_iterations: int = 0
    converged: bool = True
    extra: dict = field(default_factory=dict)


def default_step(problem: ClosedLoopProblem) -> float:
    return 1.0 / (problem.lipschitz + (problem.mu or 0.0))


def _fb_map(problem: ClosedLoopProblem, m: Distribution, u: np.ndarray, lam: float) -> np.ndarray:
    return problem.A.apply_resolvent(lam, u - lam * b_m(problem, m, u))


def solve_inner(
    problem: ClosedLoopProblem,
    m: Distribution,
    x_init,
    tol: float,
    max_iter: int = 10_000,
    step: Optional[float] = None,
) -> np.ndarray:
    """
    Zero of F_m = A + B_m for a fixed distribution by forward-backward iteration.

    Args:
        problem: the closed-loop problem supplying A and B.
        m: the frozen distribution.
        x_init: warm start.
        tol: bound on the fixed-point residual ||u - J(u - lam B_m(u))|| / lam.
        max_iter: iteration budget.
        step: lam; defaults to 1 / (L + mu).

    Returns:
        The first iterate whose residual is within tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = step if step is not None else default_step(problem)
    if lam <= 0:
        raise ValueError("step must be positive")
    u = as_vector(x_init)
    for _ in range(max_iter):
        nxt = _fb_map(problem, m, u, lam)
        if np.linalg.norm(u - nxt) / lam <= tol:
            return u
        u = nxt
    raise MaxIterExceeded(f"inner solve did not reach residual {tol:.3g} in {max_iter} steps", best=u)


def equilibrium_residual(problem: ClosedLoopProblem, x, step: Optional[float] = None) -> float:
    """||F_{m_x}(x)|| when A is single-valued, otherwise the forward-backward residual at x."""
    x = as_vector(x)
    if problem.A.smooth:
        return float(np.linalg.norm(closed_loop_field(problem, x)))
    lam = step if step is not None else default_step(problem)
    return float(np.linalg.norm(x - _fb_map(problem, problem.map(x), x, lam)) / lam)


def contraction_diagnostics(iterates: Sequence, x_bar) -> List[float]:
    """Ratios ||x_{k+1} - x_bar|| / ||x_k - x_bar||, skipping vanishing denominators."""
    if len(iterates) < 2:
        raise TooFewIterates("need at least two iterates")
    x_bar = as_vector(x_bar)
    dists = [float(np.linalg.norm(as_vector(x) - x_bar)) for x in iterates]
    return [dists[k + 1] / dists[k] for k in range(len(dists) - 1) if dists[k] >= 1e-14]


def repeated_minimization(
    problem: ClosedLoopProblem,
    x0,
    tol: float,
    max_outer: int = 500,
    step: Optional[float] = None,
    max_inner: int = 10_000,
) -> EquilibriumReport:
    """
    Picard iteration x_{k+1} = zer F_{m_{x_k}}, each zero computed by solve_inner warm-started at x_k.

    With rho = beta*tau/mu < 1 the loop stops on the a posteriori Banach bound
    ||x_{k+1} - x_k|| <= tol (1 - rho) / max(1, rho). Without contraction a uniform modulus must be
    declared; the loop then stops on ||x_{k+1} - x_k|| <= tol. Either way the returned x_bar also has
    equilibrium_residual <= tol: while it does not, the step bound is tightened tenfold and the
    iteration goes on, raising MaxIterExceeded once max_outer is spent.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rho = problem.rho
    contracting = rho < 1
    if not contracting and problem.modulus is None:
        raise NoContraction(f"declared rho = {rho:.6g} >= 1 and no uniform modulus")
    stop = tol * (1.0 - rho) / max(1.0, rho) if contracting else tol
    decay = rho if contracting else 1.0

    x = as_vector(x0)
    iterates = [x]
    prev_step = None
    streak = 0
    for k in range(max_outer):
        inner_tol = max(INNER_TOL_FLOOR, tol * 0.1 * decay ** k)
        try:
            x_next = solve_inner(problem, problem.map(x), x, inner_tol, max_inner, step)
        except MaxIterExceeded as e:
            raise MaxIterExceeded(f"outer step {k}: {e}", best=x) from e
        step_norm = float(np.linalg.norm(x_next - x))
        iterates.append(x_next)
        if prev_step is not None and prev_step > 0:
            ratio = step_norm / prev_step
            streak = streak + 1 if ratio > 1 else 0
            logger.debug("[EQ] outer %d: step=%.3e ratio=%.4g", k + 1, step_norm, ratio)
            if streak >= NO_CONTRACTION_PATIENCE:
                raise NoContraction(f"step ratios exceeded 1 for {streak} consecutive outer steps")
        else:
            logger.debug("[EQ] outer %d: step=%.3e", k + 1, step_norm)
        prev_step = step_norm
        x = x_next
        if step_norm <= stop:
            residual = equilibrium_residual(problem, x, step)
            if residual <= tol:
                break
            # small steps but F(x) still above tol: demand smaller steps
            stop *= STOP_TIGHTEN
            logger.debug("[EQ] outer %d: residual %.3e > tol, step stop now %.3e", k + 1, residual, stop)
    else:
        raise MaxIterExceeded(f"no equilibrium with residual <= {tol:.3g} within {max_outer} outer steps", best=x)

    # x_0 = x_bar gives a zero first step: nothing to contract
    if len(iterates) == 2 and np.array_equal(iterates[0], iterates[1]):
        iterates = iterates[:1]
    ratios = contraction_diagnostics(iterates[:-1], x) if len(iterates) > 2 else []
    logger.info("[EQ] x_bar=%s after %d outer steps, residual %.3e", x, len(iterates) - 1, residual)
    return EquilibriumReport(
        x_bar=x,
        iterates=iterates,
        ratios=ratios,
        rho_declared=rho,
        residual=residual,
        outer_iterations=len(iterates) - 1,
        converged=residual <= tol,
    )
