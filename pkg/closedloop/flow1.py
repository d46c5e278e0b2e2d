"""
First-order closed-loop flow x'(t) + F_{m_x(t)}(x(t)) in 0 and its convergence envelopes.

The default discretization is forward-backward: backward (resolvent) on A, forward on B_{m_x}.
When A has a forward evaluation the full field is integrated with RK4 instead.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from closedloop.distmap import w1
from closedloop.errors import (
    DomainViolation,
    EmptyWindow,
    EquilibriumMismatch,
    ForwardUnavailable,
    StepTooLarge,
)
from closedloop.numerics import (
    TimeSeries,
    as_vector,
    fit_exponential_rate,
    rk4_step,
    uniform_grid,
)
from closedloop.operators import ClosedLoopProblem, UniformModulus, b_m, theta, theta_inv

logger = logging.getLogger(__name__)

MAX_UNIFORM_ENVELOPE_POINTS = 400


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    velocities: Optional[np.ndarray] = None
    aux: Optional[np.ndarray] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")
        if self.velocities is not None and len(self.velocities) != len(self.times):
            raise ValueError("velocities must match the time grid")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory holds non-finite states")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def distance_to(self, x_bar) -> TimeSeries:
        x_bar = as_vector(x_bar)
        return TimeSeries(self.times, np.linalg.norm(self.states - x_bar, axis=1))


@dataclass(eq=False)
class BoundReport:
    satisfied: bool
    max_violation: float
    envelope: TimeSeries
    observed: TimeSeries
    fitted_rate: Optional[float]
    tolerance: float = 1e-6
    extra: Dict = field(default_factory=dict)


def tail_rate(series: TimeSeries, window: Optional[Sequence[float]] = None) -> Optional[float]:
    """Fitted decay rate of the strictly positive samples, None when too few remain."""
    values = np.asarray(series.values, dtype=float)
    mask = values > 1e-300
    if mask.sum() < 3:
        return None
    try:
        return fit_exponential_rate(TimeSeries(series.times[mask], values[mask]), window).rate
    except EmptyWindow:
        return None


def make_report(observed: TimeSeries, envelope: TimeSeries, tolerance: float, **extra) -> BoundReport:
    excess = np.asarray(observed.values) - np.asarray(envelope.values)
    max_violation = float(excess.max()) if len(excess) else 0.0
    return BoundReport(
        satisfied=max_violation <= tolerance,
        max_violation=max_violation,
        envelope=envelope,
        observed=observed,
        fitted_rate=tail_rate(observed),
        tolerance=tolerance,
        extra=extra,
    )


def smi_step_bound(problem: ClosedLoopProblem) -> float:
    return 1.0 / (2.0 * (problem.lipschitz + problem.beta_tau))


def integrate_smi(
    problem: ClosedLoopProblem,
    x0,
    t0: float,
    T: float,
    h: float,
    method: str = "auto",
    frozen_at=None,
    gap_scale: float = 1.0,
) -> Trajectory:
    """
    Integrate x' + A(x) + B_{m_x}(x) in 0 on a uniform grid.

    Args:
        problem: closed-loop problem.
        x0: initial state, must pass A.domain_check.
        t0: initial time, positive.
        T: horizon end.
        h: step, at most 1 / (2 (L + beta*tau)).
        method: "fb" (forward-backward), "rk4" (needs A.forward) or "auto".
        frozen_at: x_bar for the frozen form x' + F_{m_xbar}(x) + s e_xbar(x) in 0.
        gap_scale: s above; 1 reproduces the closed loop, 0 drops the gap term.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    if h <= 0:
        raise ValueError("step h must be positive")
    h_max = smi_step_bound(problem)
    if h > h_max:
        raise StepTooLarge(f"h = {h:.4g} exceeds 1/(2(L + beta*tau)) = {h_max:.4g}")
    x0 = as_vector(x0)
    if not problem.A.domain_check(x0):
        raise DomainViolation(f"x0 = {x0} is outside dom A")
    if method == "auto":
        method = "rk4" if problem.A.smooth else "fb"
    if method == "rk4" and not problem.A.smooth:
        raise ForwardUnavailable("RK4 needs a single-valued A")
    if method not in ("rk4", "fb"):
        raise ValueError(f"unknown method {method!r}")

    if frozen_at is None:
        def drift(x: np.ndarray) -> np.ndarray:
            return b_m(problem, problem.map(x), x)
    else:
        x_bar = as_vector(frozen_at)
        m_bar = problem.map(x_bar)

        def drift(x: np.ndarray) -> np.ndarray:
            frozen = b_m(problem, m_bar, x)
            if gap_scale == 0.0:
                return frozen
            return frozen + gap_scale * (b_m(problem, problem.map(x), x) - frozen)

    times, h_eff = uniform_grid(t0, T, h)
    states = np.empty((len(times), len(x0)))
    states[0] = x0
    x = x0
    if method == "rk4":
        def velocity(x: np.ndarray) -> np.ndarray:
            return -(problem.A.apply_forward(x) + drift(x))

        for k in range(1, len(times)):
            x = rk4_step(x, velocity, h_eff)
            states[k] = x
    else:
        for k in range(1, len(times)):
            x = problem.A.apply_resolvent(h_eff, x - h_eff * drift(x))
            states[k] = x

    logger.info("[SMI] %s: %d steps of %.3g, x(T) = %s", method, len(times) - 1, h_eff, x)
    return Trajectory(
        times=times,
        states=states,
        meta={
            "solver": "rk4" if method == "rk4" else "forward-backward",
            "h": h_eff,
            "t0": t0,
            "problem": problem.name,
            "form": "closed-loop" if frozen_at is None else f"frozen(gap_scale={gap_scale})",
        },
    )


def _check_final_quarter(observed: TimeSeries) -> None:
    values = np.asarray(observed.values)
    start = int(0.75 * (len(values) - 1))
    if values[-1] > values[start] * (1.0 + 1e-6) + 1e-12:
        raise EquilibriumMismatch(
            f"distance to x_bar grows over the final quarter ({values[start]:.3g} -> {values[-1]:.3g})"
        )


def check_speed_bounds(
    traj: Trajectory,
    x_bar,
    problem: ClosedLoopProblem,
    rate_multiplier: float = 1.0,
    tolerance: float = 1e-6,
) -> BoundReport:
    """
    Compare ||x(t) - x_bar|| with the exponential envelope (strongly monotone case) or with
    theta^{-1}(rate_multiplier t - t_hat) (uniform modulus case).
    """
    observed = traj.distance_to(x_bar)
    t0 = traj.times[0]
    d0 = float(observed.values[0])
    if d0 == 0.0:
        # started at x_bar: the envelope is identically zero
        return make_report(observed, TimeSeries(traj.times, np.zeros(len(traj))), tolerance, rate_multiplier=rate_multiplier)
    _check_final_quarter(observed)

    if problem.mu is not None:
        rate = rate_multiplier * (problem.mu - problem.beta_tau)
        envelope = TimeSeries(traj.times, d0 * np.exp(-rate * (traj.times - t0)))
        report = make_report(observed, envelope, tolerance, theoretical_rate=rate, rate_multiplier=rate_multiplier)
    else:
        modulus = UniformModulus(problem.modulus.phi, max(problem.modulus.a_ref, d0))
        t_hat = rate_multiplier * t0 - theta(modulus, problem.beta_tau, d0)
        stride = max(1, int(np.ceil(len(traj) / MAX_UNIFORM_ENVELOPE_POINTS)))
        idx = np.unique(np.append(np.arange(0, len(traj), stride), len(traj) - 1))
        times = traj.times[idx]
        env = np.array([theta_inv(modulus, problem.beta_tau, max(0.0, rate_multiplier * t - t_hat)) for t in times])
        report = make_report(
            TimeSeries(times, observed.values[idx]),
            TimeSeries(times, env),
            tolerance,
            rate_multiplier=rate_multiplier,
            t_hat=t_hat,
        )
    logger.info(
        "[SMI] speed bound x%g: satisfied=%s max_violation=%.3e fitted_rate=%s",
        rate_multiplier, report.satisfied, report.max_violation, report.fitted_rate,
    )
    return report


def w1_decay_report(traj: Trajectory, problem: ClosedLoopProblem, x_bar) -> TimeSeries:
    """W1(m_{x(t)}, m_xbar) along the trajectory."""
    x_bar = as_vector(x_bar)
    m_bar = problem.map(x_bar)
    values = np.array([w1(problem.map(x), m_bar) for x in traj.states])
    bound = problem.map.tau * np.linalg.norm(traj.states - x_bar, axis=1) + 1e-9
    if np.any(values > bound):
        logger.warning("[SMI] W1 decay exceeds tau * ||x(t) - x_bar|| at %d grid points", int(np.sum(values > bound)))
    return TimeSeries(traj.times, values)


def write_trajectory_csv(
    traj: Trajectory,
    path: Union[str, Path],
    extra_columns: Optional[Dict[str, Sequence[float]]] = None,
) -> None:
    """CSV with header t,x_0..x_{n-1}[,v_0..][,extra...] at 17 significant digits."""
    extra_columns = extra_columns or {}
    n = traj.dim
    header = ["t"] + [f"x_{i}" for i in range(n)]
    if traj.velocities is not None:
        header += [f"v_{i}" for i in range(np.shape(traj.velocities)[1])]
    header += list(extra_columns)
    for name, column in extra_columns.items():
        if len(column) != len(traj):
            raise ValueError(f"column {name} has {len(column)} rows, expected {len(traj)}")

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for k in range(len(traj)):
            row = [traj.times[k], *traj.states[k]]
            if traj.velocities is not None:
                row += list(traj.velocities[k])
            row += [column[k] for column in extra_columns.values()]
            writer.writerow([format(float(v), ".17g") for v in row])
