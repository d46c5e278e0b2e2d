"""
Inertial closed-loop flow with explicit Hessian damping,

    x'' + gamma(t) x' + omega d/dt F(x) + F(x) = 0,   F(x) = grad G_{m_xbar}(x) + e_xbar(x),

integrated through the equivalent first-order system in (x, y):

    x' = -omega F(x) + (1/omega - gamma) x - y / omega
    y' = (1/omega - gamma - omega gamma') x - y / omega

Since F(x) = A(x) + B_{m_x}(x) is the closed-loop field, neither x_bar nor the derivative of the gap
operator is needed to integrate. Smooth A only.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from closedloop.distmap import w1
from closedloop.errors import NonSmoothA, StepTooLarge
from closedloop.flow1 import BoundReport, Trajectory, make_report
from closedloop.numerics import TimeSeries, as_vector, rk4_step_timed, uniform_grid
from closedloop.operators import ClosedLoopProblem, closed_loop_field, frozen_field, potential

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ISEHDConfig:
    omega: float
    mu: float
    t0: float
    T: float
    h: Optional[float] = None
    gamma: Optional[Callable[[float], float]] = None
    gamma_dot: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.t0 <= 0 or self.T <= self.t0:
            raise ValueError("need 0 < t0 < T")
        if self.h is None:
            object.__setattr__(self, "h", 1e-3 / np.sqrt(self.mu))
        elif self.h <= 0:
            raise ValueError("step h must be positive")
        if (self.gamma is None) != (self.gamma_dot is None):
            raise ValueError("gamma and gamma_dot go together")

    @property
    def gamma_const(self) -> float:
        return 2.0 * np.sqrt(self.mu)

    def gamma_at(self, t: float) -> float:
        return self.gamma_const if self.gamma is None else float(self.gamma(t))

    def gamma_dot_at(self, t: float) -> float:
        return 0.0 if self.gamma_dot is None else float(self.gamma_dot(t))


def check_damping_condition(mu: float, L: float, beta: float, tau: float, omega: float) -> Tuple[bool, Dict[str, float]]:
    """
    Both inequalities 16 rho^2 + omega < 1 and
    omega < min(1 / (2 sqrt(mu)), sqrt(mu) / (2 sqrt(2) (2L + beta tau))), rho = beta tau / mu.
    """
    rho = beta * tau / mu
    omega_bound = min(1.0 / (2.0 * np.sqrt(mu)), np.sqrt(mu) / (2.0 * np.sqrt(2.0) * (2.0 * L + beta * tau)))
    margins = {
        "rho": rho,
        "rho_margin": 1.0 - (16.0 * rho ** 2 + omega),
        "omega_bound": float(omega_bound),
        "omega_margin": float(omega_bound - omega),
    }
    ok = margins["rho_margin"] > 0 and margins["omega_margin"] > 0
    if not ok and margins["rho_margin"] >= 0 and margins["omega_margin"] >= 0:
        logger.warning("[ISEHD] damping condition holds only with equality (omega=%g, rho=%g)", omega, rho)
    return ok, margins


def isehd_stiffness(problem: ClosedLoopProblem, config: ISEHDConfig) -> float:
    lip = problem.A.lipschitz + problem.lipschitz
    gamma = config.gamma_const if config.gamma is None else abs(config.gamma_at(config.t0))
    if config.omega == 0:
        return gamma + np.sqrt(lip)
    return config.omega * lip + abs(1.0 / config.omega - gamma) + 1.0 / config.omega


def integrate_isehd(problem: ClosedLoopProblem, x0, v0, config: ISEHDConfig) -> Trajectory:
    """
    RK4 on the (x, y) system (omega > 0) or on (x, x') directly (omega = 0).

    Returns:
        Trajectory with states x(t), velocities x'(t) and, for omega > 0, aux y(t).
    """
    if not problem.A.smooth:
        raise NonSmoothA("the inertial flow needs a single-valued A = grad g")
    stiffness = isehd_stiffness(problem, config)
    if config.h * stiffness > 1.0:
        raise StepTooLarge(f"h * stiffness = {config.h * stiffness:.3g} > 1")
    ok, margins = check_damping_condition(config.mu, problem.lipschitz, problem.B.beta, problem.map.tau, config.omega)
    if not ok:
        logger.warning("[ISEHD] damping condition violated: %s", margins)

    x0, v0 = as_vector(x0), as_vector(v0)
    n = len(x0)
    omega = config.omega
    times, h = uniform_grid(config.t0, config.T, config.h)

    def F(x: np.ndarray) -> np.ndarray:
        return closed_loop_field(problem, x)

    states = np.empty((len(times), n))
    velocities = np.empty((len(times), n))
    aux = None

    if omega == 0:
        def field_direct(t: float, s: np.ndarray) -> np.ndarray:
            x, v = s[:n], s[n:]
            return np.concatenate([v, -config.gamma_at(t) * v - F(x)])

        s = np.concatenate([x0, v0])
        states[0], velocities[0] = x0, v0
        for k in range(1, len(times)):
            s = rk4_step_timed(times[k - 1], s, field_direct, h)
            states[k], velocities[k] = s[:n], s[n:]
        solver = "rk4-direct"
    else:
        def x_dot(t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
            return -omega * F(x) + (1.0 / omega - config.gamma_at(t)) * x - y / omega

        def field_xy(t: float, s: np.ndarray) -> np.ndarray:
            x, y = s[:n], s[n:]
            y_dot = (1.0 / omega - config.gamma_at(t) - omega * config.gamma_dot_at(t)) * x - y / omega
            return np.concatenate([x_dot(t, x, y), y_dot])

        y0 = -omega * v0 - omega ** 2 * F(x0) + (1.0 - omega * config.gamma_at(config.t0)) * x0
        s = np.concatenate([x0, y0])
        aux = np.empty((len(times), n))
        states[0], aux[0], velocities[0] = x0, y0, v0
        for k in range(1, len(times)):
            s = rk4_step_timed(times[k - 1], s, field_xy, h)
            states[k], aux[k] = s[:n], s[n:]
            velocities[k] = x_dot(times[k], s[:n], s[n:])
        solver = "rk4-xy"

    logger.info("[ISEHD] %s omega=%g: %d steps of %.3g, x(T) = %s", solver, omega, len(times) - 1, h, states[-1])
    return Trajectory(
        times=times,
        states=states,
        velocities=velocities,
        aux=aux,
        meta={"solver": solver, "h": h, "t0": config.t0, "omega": omega, "problem": problem.name},
    )


@dataclass(eq=False)
class LyapunovTrace:
    times: np.ndarray
    V: np.ndarray
    gap: np.ndarray
    vnorm: np.ndarray
    distance: np.ndarray
    gradnorm: np.ndarray
    meta: Dict = field(default_factory=dict)

    def series(self, name: str) -> TimeSeries:
        return TimeSeries(self.times, getattr(self, name))


def lyapunov_trace(traj: Trajectory, problem: ClosedLoopProblem, x_bar, config: ISEHDConfig) -> LyapunovTrace:
    """V = G_{m_xbar}(x) - G* + |v|^2 / 2 with v = sqrt(mu)(x - x_bar) + x' + omega grad G_{m_xbar}(x)."""
    if traj.velocities is None:
        raise ValueError("trajectory carries no velocities")
    x_bar = as_vector(x_bar)
    m_bar = problem.map(x_bar)
    g_star = potential(problem, m_bar, x_bar)
    sqrt_mu = np.sqrt(config.mu)

    gaps, vnorms, gradnorms = [], [], []
    for x, xd in zip(traj.states, traj.velocities):
        grad = frozen_field(problem, m_bar, x)
        v = sqrt_mu * (x - x_bar) + xd + config.omega * grad
        gaps.append(potential(problem, m_bar, x) - g_star)
        vnorms.append(float(np.linalg.norm(v)))
        gradnorms.append(float(np.linalg.norm(grad)))
    gap = np.array(gaps)
    vnorm = np.array(vnorms)
    return LyapunovTrace(
        times=traj.times,
        V=gap + 0.5 * vnorm ** 2,
        gap=gap,
        vnorm=vnorm,
        distance=np.linalg.norm(traj.states - x_bar, axis=1),
        gradnorm=np.array(gradnorms),
        meta={"mu": config.mu, "omega": config.omega, "g_star": g_star},
    )


def check_lyapunov_decay(trace: LyapunovTrace, mu: float, rel_tol: float = 1e-6) -> BoundReport:
    """V(t) <= V(t0) exp(-sqrt(mu)/4 (t - t0)), with the gap and mu/2 |x - x_bar|^2 sandwiched below it."""
    if len(trace.times) == 0:
        raise ValueError("empty trace")
    t0 = trace.times[0]
    v0 = float(trace.V[0])
    env = v0 * np.exp(-np.sqrt(mu) / 4.0 * (trace.times - t0))
    tolerance = rel_tol * abs(v0) + 1e-12
    gap_violation = float(np.max(trace.gap - env))
    sandwich_violation = float(np.max(0.5 * mu * trace.distance ** 2 - trace.gap))
    report = make_report(
        trace.series("V"),
        TimeSeries(trace.times, env),
        tolerance,
        gap_violation=gap_violation,
        sandwich_violation=sandwich_violation,
        theoretical_rate=np.sqrt(mu) / 4.0,
    )
    report.satisfied = report.satisfied and gap_violation <= tolerance and sandwich_violation <= 1e-9
    logger.info("[ISEHD] Lyapunov decay: satisfied=%s max_violation=%.3e", report.satisfied, report.max_violation)
    return report


def gradient_integral_estimate(traj: Trajectory, problem: ClosedLoopProblem, x_bar, mu: float) -> TimeSeries:
    """I(t) = exp(-sqrt(mu) t) * integral from t0 to t of exp(sqrt(mu) s) |grad G_{m_xbar}(x(s))|^2 ds (trapezoid)."""
    x_bar = as_vector(x_bar)
    m_bar = problem.map(x_bar)
    sqrt_mu = np.sqrt(mu)
    t0 = traj.times[0]
    if sqrt_mu * (traj.times[-1] - t0) > 700:
        raise ValueError("horizon too long for the weighted integral")
    grad_sq = np.array([float(np.sum(frozen_field(problem, m_bar, x) ** 2)) for x in traj.states])
    shift = np.exp(sqrt_mu * (traj.times - t0))
    integral = cumulative_trapezoid(shift * grad_sq, traj.times, initial=0.0)
    return TimeSeries(traj.times, integral / shift)


def gradient_ratio(series: TimeSeries, mu: float) -> TimeSeries:
    return TimeSeries(series.times, series.values * np.exp(np.sqrt(mu) / 4.0 * series.times))


def estimate_gradient_constant(series: TimeSeries, mu: float) -> float:
    """Empirical C with I(t) <= C exp(-sqrt(mu)/4 t) over the sampled horizon."""
    return float(np.max(gradient_ratio(series, mu).values))


def w1_decay_report_2nd(
    traj: Trajectory,
    problem: ClosedLoopProblem,
    x_bar,
    V0: float,
    mu: float,
    tolerance: float = 1e-9,
) -> BoundReport:
    """W1(m_{x(t)}, m_xbar) against tau sqrt(2 V0 / mu) exp(-sqrt(mu)/8 (t - t0))."""
    x_bar = as_vector(x_bar)
    m_bar = problem.map(x_bar)
    observed = TimeSeries(traj.times, np.array([w1(problem.map(x), m_bar) for x in traj.states]))
    env = problem.map.tau * np.sqrt(2.0 * max(V0, 0.0) / mu) * np.exp(-np.sqrt(mu) / 8.0 * (traj.times - traj.times[0]))
    return make_report(observed, TimeSeries(traj.times, env), tolerance, theoretical_rate=np.sqrt(mu) / 8.0)
