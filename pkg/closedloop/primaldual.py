"""
Saddle problems min_x max_y f_{m^p}(x) + g(x) + <y, Kx> - h(y) - r_{m^d}(y) with decision-dependent data.

The optimality system is the monotone inclusion 0 in T(z) = A(z) + L z + B(z) on z = (x, y), with
A = diag(dg, dh), the skew block L = [[0, K^T], [-K, 0]] and B = diag(grad f_{m^p}, grad r_{m^d}).
as_closed_loop_problem packs it as a ClosedLoopProblem on the product space so the equilibrium and
first-order flow machinery applies unchanged.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from closedloop.distmap import DecisionMap, Distribution, ProductDistribution, expect_vector
from closedloop.equilibrium import EquilibriumReport, repeated_minimization
from closedloop.errors import ConditionViolated, ForwardUnavailable, NonSmoothA, PotentialUnavailable, StepTooLarge
from closedloop.flow1 import BoundReport, Trajectory, check_speed_bounds, integrate_smi, make_report, tail_rate
from closedloop.numerics import TimeSeries, as_vector, rk4_step, uniform_grid
from closedloop.operators import ClosedLoopProblem, MonotoneOracle, RandomField, closed_loop_field

logger = logging.getLogger(__name__)

ISPDS_RHO_LIMIT = np.sqrt(2.0) / 4.0


@dataclass(frozen=True)
class PDState:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", as_vector(self.x))
        object.__setattr__(self, "y", as_vector(self.y))

    def stack(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


@dataclass(frozen=True)
class SaddleInstance:
    f_field: RandomField
    r_field: RandomField
    g: MonotoneOracle
    h: MonotoneOracle
    K: np.ndarray
    map_p: DecisionMap
    map_d: DecisionMap
    mu_p: float
    mu_d: float
    tau: Optional[float] = None
    f_value: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    r_value: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    quad_points: int = 16
    name: str = field(default="")

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        if self.mu_p <= 0 or self.mu_d <= 0:
            raise ValueError("mu_p and mu_d must be positive")
        if self.tau is None:
            object.__setattr__(self, "tau", max(self.map_p.tau, self.map_d.tau))

    @property
    def n_x(self) -> int:
        return self.K.shape[1]

    @property
    def n_y(self) -> int:
        return self.K.shape[0]

    @property
    def tilde_mu(self) -> float:
        return min(self.mu_p, self.mu_d)

    @property
    def tilde_beta(self) -> float:
        return max(self.f_field.beta, self.r_field.beta)

    @property
    def tilde_L(self) -> float:
        return max(self.f_field.lipschitz_L, self.r_field.lipschitz_L)

    @property
    def tilde_rho(self) -> float:
        return self.tau * self.tilde_beta / self.tilde_mu

    @property
    def K_norm(self) -> float:
        return float(np.linalg.norm(self.K, 2))

    def split(self, z) -> PDState:
        z = as_vector(z)
        if len(z) != self.n_x + self.n_y:
            raise ValueError(f"state of length {len(z)}, expected {self.n_x + self.n_y}")
        return PDState(z[: self.n_x], z[self.n_x:])

    def skew(self, z: np.ndarray) -> np.ndarray:
        """L z = (K^T y, -K x)."""
        s = self.split(z)
        return np.concatenate([self.K.T @ s.y, -self.K @ s.x])


def _stacked(instance: SaddleInstance, z: Union[PDState, np.ndarray]) -> np.ndarray:
    return z.stack() if isinstance(z, PDState) else instance.split(z).stack()


def pd_operator_T(instance: SaddleInstance, m_p: Distribution, m_d: Distribution, z: Union[PDState, np.ndarray]) -> PDState:
    """T(z) = (dg(x) + grad f_{m_p}(x) + K^T y, dh(y) + grad r_{m_d}(y) - K x)."""
    if not (instance.g.smooth and instance.h.smooth):
        raise ForwardUnavailable("T needs single-valued g and h")
    s = instance.split(_stacked(instance, z))
    fx = expect_vector(m_p, lambda xi: instance.f_field.eval(s.x, xi), instance.quad_points)
    ry = expect_vector(m_d, lambda zeta: instance.r_field.eval(s.y, zeta), instance.quad_points)
    return PDState(
        instance.g.apply_forward(s.x) + fx + instance.K.T @ s.y,
        instance.h.apply_forward(s.y) + ry - instance.K @ s.x,
    )


def _block_oracle(instance: SaddleInstance) -> MonotoneOracle:
    g, h, n_x = instance.g, instance.h, instance.n_x

    def resolvent(lam: float, v: np.ndarray) -> np.ndarray:
        return np.concatenate([g.apply_resolvent(lam, v[:n_x]), h.apply_resolvent(lam, v[n_x:])])

    forward = None
    if g.smooth and h.smooth:
        def forward(z: np.ndarray) -> np.ndarray:
            return np.concatenate([g.apply_forward(z[:n_x]), h.apply_forward(z[n_x:])])

    return MonotoneOracle(
        resolvent=resolvent,
        forward=forward,
        mu_A=min(g.mu_A, h.mu_A),
        domain_check=lambda z: g.domain_check(z[:n_x]) and h.domain_check(z[n_x:]),
        lipschitz=max(g.lipschitz, h.lipschitz),
        name=f"diag({g.name}, {h.name})",
    )


def as_closed_loop_problem(instance: SaddleInstance) -> ClosedLoopProblem:
    """Product-space problem on z = (x, y) with kernel z -> m^p_x (x) m^d_y; the skew block rides in B."""
    n_x = instance.n_x
    xi_split = instance.map_p(np.zeros(n_x)).dim
    K = instance.K

    def field_eval(z: np.ndarray, w: np.ndarray) -> np.ndarray:
        x, y = z[:n_x], z[n_x:]
        return np.concatenate([
            as_vector(instance.f_field.eval(x, w[:xi_split])) + K.T @ y,
            as_vector(instance.r_field.eval(y, w[xi_split:])) - K @ x,
        ])

    def kernel(z: np.ndarray) -> Distribution:
        return ProductDistribution((instance.map_p(z[:n_x]), instance.map_d(z[n_x:])))

    return ClosedLoopProblem(
        A=_block_oracle(instance),
        B=RandomField(
            eval=field_eval,
            beta=instance.tilde_beta,
            lipschitz_L=instance.tilde_L + instance.K_norm,
        ),
        map=DecisionMap(kernel=kernel, tau=instance.tau, name=f"{instance.map_p.name} x {instance.map_d.name}"),
        mu=instance.tilde_mu,
        quad_points=instance.quad_points,
        name=instance.name,
    )


def pd_inner_step(instance: SaddleInstance) -> float:
    """mu~ / l^2 with l = L~ + ||K||; the skew block is handled as a forward term."""
    lip = instance.tilde_L + instance.K_norm
    return instance.tilde_mu / lip ** 2


def pd_equilibrium(instance: SaddleInstance, z0: Union[PDState, np.ndarray], tol: float, max_outer: int = 500) -> EquilibriumReport:
    problem = as_closed_loop_problem(instance)
    report = repeated_minimization(problem, _stacked(instance, z0), tol, max_outer=max_outer, step=pd_inner_step(instance))
    report.extra["z_bar"] = instance.split(report.x_bar)
    report.extra["tilde_rho"] = instance.tilde_rho
    logger.info("[PD] z_bar = %s, residual %.3e", report.x_bar, report.residual)
    return report


def integrate_spds(instance: SaddleInstance, z0: Union[PDState, np.ndarray], t0: float, T: float, h: float, method: str = "auto") -> Trajectory:
    """Z' + T_{m_Z}(Z) in 0, the closed-loop first-order primal-dual flow."""
    return integrate_smi(as_closed_loop_problem(instance), _stacked(instance, z0), t0, T, h, method=method)


def check_spds_bounds(traj: Trajectory, instance: SaddleInstance, z_bar, rate_multiplier: float = 1.0) -> BoundReport:
    """||Z(t) - z_bar|| against exp(-rate_multiplier (mu~ - tau beta~)(t - t0)) ||Z(t0) - z_bar||."""
    return check_speed_bounds(traj, _stacked(instance, z_bar), as_closed_loop_problem(instance), rate_multiplier)


def integrate_ispds(
    instance: SaddleInstance,
    z0: Union[PDState, np.ndarray],
    zdot0: Union[PDState, np.ndarray],
    t0: float,
    T: float,
    h: float,
) -> Trajectory:
    """
    Z'' + 2 sqrt(mu~) Z' + (grad_x L(x, y + y'/sqrt(mu~)), -grad_y L(x + x'/sqrt(mu~), y)) + E(Z) = 0.

    With closed-loop kernels the bracket equals F_{m_Z}(Z) + L Z' / sqrt(mu~), integrated with RK4
    on (Z, Z').
    """
    if not (instance.g.smooth and instance.h.smooth):
        raise NonSmoothA("the inertial primal-dual flow needs smooth g and h")
    if t0 <= 0 or T <= t0:
        raise ValueError("need 0 < t0 < T")
    problem = as_closed_loop_problem(instance)
    sqrt_mu = np.sqrt(instance.tilde_mu)
    stiffness = 2.0 * sqrt_mu + np.sqrt(problem.lipschitz + problem.A.lipschitz) + instance.K_norm / sqrt_mu
    if h * stiffness > 1.0:
        raise StepTooLarge(f"h * stiffness = {h * stiffness:.3g} > 1")
    if instance.tilde_rho >= ISPDS_RHO_LIMIT:
        logger.warning("[PD] rho~ = %.4g >= sqrt(2)/4: no decay guarantee", instance.tilde_rho)

    z0, zdot0 = _stacked(instance, z0), _stacked(instance, zdot0)
    d = len(z0)

    def field_zz(s: np.ndarray) -> np.ndarray:
        z, v = s[:d], s[d:]
        acc = -2.0 * sqrt_mu * v - closed_loop_field(problem, z) - instance.skew(v) / sqrt_mu
        return np.concatenate([v, acc])

    times, h_eff = uniform_grid(t0, T, h)
    states = np.empty((len(times), d))
    velocities = np.empty((len(times), d))
    s = np.concatenate([z0, zdot0])
    states[0], velocities[0] = z0, zdot0
    for k in range(1, len(times)):
        s = rk4_step(s, field_zz, h_eff)
        states[k], velocities[k] = s[:d], s[d:]
    logger.info("[PD] ISPDS: %d steps of %.3g, Z(T) = %s", len(times) - 1, h_eff, states[-1])
    return Trajectory(
        times=times,
        states=states,
        velocities=velocities,
        meta={"solver": "rk4-ispds", "h": h_eff, "t0": t0, "problem": instance.name},
    )


def lagrangian(instance: SaddleInstance, m_p: Distribution, m_d: Distribution, x, y) -> float:
    """L(x, y) = f_{m_p}(x) + g(x) + <y, Kx> - h(y) - r_{m_d}(y)."""
    if None in (instance.f_value, instance.r_value, instance.g.value, instance.h.value):
        raise PotentialUnavailable(f"instance {instance.name!r} does not expose Lagrangian values")
    x, y = as_vector(x), as_vector(y)
    f_m = expect_vector(m_p, lambda xi: instance.f_value(x, xi), instance.quad_points)[0]
    r_m = expect_vector(m_d, lambda zeta: instance.r_value(y, zeta), instance.quad_points)[0]
    return float(f_m + instance.g.value(x) + y @ (instance.K @ x) - instance.h.value(y) - r_m)


def lagrangian_gap(instance: SaddleInstance, z: Union[PDState, np.ndarray], z_bar: Union[PDState, np.ndarray]) -> float:
    """L(x, y_bar) - L(x_bar, y) with the distributions frozen at z_bar."""
    s, sb = instance.split(_stacked(instance, z)), instance.split(_stacked(instance, z_bar))
    m_p, m_d = instance.map_p(sb.x), instance.map_d(sb.y)
    return lagrangian(instance, m_p, m_d, s.x, sb.y) - lagrangian(instance, m_p, m_d, sb.x, s.y)


def check_pd_decay(
    traj: Trajectory,
    instance: SaddleInstance,
    z_bar: Union[PDState, np.ndarray],
    tilde_mu: Optional[float] = None,
    tolerance: float = 1e-6,
) -> BoundReport:
    """
    (mu~/2) ||Z(t) - z_bar||^2 <= gap(t) <= V(t0) exp(-sqrt(mu~)/4 (t - t0)),
    V(t0) = gap(t0) + |sqrt(mu~)(Z(t0) - z_bar) + Z'(t0)|^2 / 2.
    """
    if instance.tilde_rho >= ISPDS_RHO_LIMIT:
        raise ConditionViolated(f"rho~ = {instance.tilde_rho:.4g} >= sqrt(2)/4")
    if traj.velocities is None:
        raise ValueError("trajectory carries no velocities")
    mu = instance.tilde_mu if tilde_mu is None else tilde_mu
    zb = _stacked(instance, z_bar)
    gaps = np.array([lagrangian_gap(instance, z, zb) for z in traj.states])
    v0 = np.sqrt(mu) * (traj.states[0] - zb) + traj.velocities[0]
    V0 = float(gaps[0] + 0.5 * v0 @ v0)
    t0 = traj.times[0]
    env = V0 * np.exp(-np.sqrt(mu) / 4.0 * (traj.times - t0))
    sandwich_violation = float(np.max(0.5 * mu * np.sum((traj.states - zb) ** 2, axis=1) - gaps))
    report = make_report(
        TimeSeries(traj.times, gaps),
        TimeSeries(traj.times, env),
        tolerance,
        V0=V0,
        sandwich_violation=sandwich_violation,
        theoretical_rate=np.sqrt(mu) / 4.0,
    )
    report.satisfied = report.satisfied and sandwich_violation <= 1e-9
    logger.info("[PD] Lagrangian gap decay: satisfied=%s max_violation=%.3e", report.satisfied, report.max_violation)
    return report


class VelocityDecay(NamedTuple):
    series: TimeSeries
    fitted_rate: Optional[float]


def velocity_decay(traj: Trajectory) -> VelocityDecay:
    """||Z'(t)|| with its fitted tail rate; reported, no envelope attached."""
    if traj.velocities is None:
        raise ValueError("trajectory carries no velocities")
    series = TimeSeries(traj.times, np.linalg.norm(traj.velocities, axis=1))
    return VelocityDecay(series, tail_rate(series))
