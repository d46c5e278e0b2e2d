"""Shared numerical kernels: vectors, RK4 steps, quadrature, monotone inversion and exponential-rate fits."""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from closedloop.errors import (
    BracketInvalid,
    EmptyWindow,
    NonFiniteField,
    NonPositiveValue,
    ToleranceNotReached,
)

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]
TimedField = Callable[[float, np.ndarray], np.ndarray]

QUAD_LIMIT = 200


def as_vector(x) -> np.ndarray:
    """Coerce a scalar or sequence to a finite 1-D float array."""
    v = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NonFiniteField(f"non-finite entries in {v}")
    return v


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Samples of a scalar or vector quantity on a strictly increasing time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or len(times) != len(values):
            raise ValueError("times and values must have the same length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)

    def window(self, t_a: float, t_b: float) -> "TimeSeries":
        mask = (self.times >= t_a) & (self.times <= t_b)
        return TimeSeries(self.times[mask], self.values[mask])


def uniform_grid(t0: float, T: float, h: float) -> Tuple[np.ndarray, float]:
    """Uniform grid from t0 to exactly T with step at most h. Returns (times, effective step)."""
    if h <= 0:
        raise ValueError("step h must be positive")
    if T <= t0:
        raise ValueError("horizon T must exceed t0")
    n = max(1, int(np.ceil((T - t0) / h - 1e-9)))
    times = t0 + (T - t0) * np.arange(n + 1) / n
    return times, (T - t0) / n


def _checked(k: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(k)):
        raise NonFiniteField("field produced NaN/Inf")
    return k


def rk4_step(state: np.ndarray, field: Field, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of an autonomous field."""
    if h <= 0:
        raise ValueError("step h must be positive")
    k1 = _checked(field(state))
    k2 = _checked(field(state + 0.5 * h * k1))
    k3 = _checked(field(state + 0.5 * h * k2))
    k4 = _checked(field(state + h * k3))
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_timed(t: float, state: np.ndarray, field: TimedField, h: float) -> np.ndarray:
    """Runge-Kutta step for a field that depends on time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    k1 = _checked(field(t, state))
    k2 = _checked(field(t + 0.5 * h, state + 0.5 * h * k1))
    k3 = _checked(field(t + 0.5 * h, state + 0.5 * h * k2))
    k4 = _checked(field(t + h, state + h * k3))
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class RateFit(NamedTuple):
    rate: float
    intercept: float
    r2: float


def fit_exponential_rate(series: TimeSeries, window: Optional[Sequence[float]] = None) -> RateFit:
    """
    Least-squares fit of log(value) = intercept - rate * t.

    Args:
        series: positive scalar samples.
        window: [t_a, t_b]; defaults to the last half of the horizon.

    Returns:
        RateFit with rate > 0 meaning decay.
    """
    if len(series) == 0:
        raise EmptyWindow("empty series")
    if window is None:
        t_first, t_last = series.times[0], series.times[-1]
        window = (t_first + 0.5 * (t_last - t_first), t_last)
    part = series.window(window[0], window[1])
    if len(part) < 3:
        raise EmptyWindow(f"fewer than 3 samples in window {tuple(window)}")
    values = np.asarray(part.values, dtype=float).reshape(len(part), -1)[:, 0]
    if np.any(values <= 0):
        raise NonPositiveValue("rate fit needs strictly positive values")

    logs = np.log(values)
    slope, intercept = np.polyfit(part.times, logs, 1)
    residual = logs - (intercept + slope * part.times)
    ss_res = float(residual @ residual)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot <= 1e-300:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(rate=float(-slope), intercept=float(intercept), r2=r2)


def adaptive_quad(
    integrand: Callable[[float], float],
    a: float,
    b: float,
    tol: float,
    points: Optional[Sequence[float]] = None,
    limit: int = QUAD_LIMIT,
) -> float:
    """Adaptive Gauss-Kronrod quadrature of integrand over [a, b] to absolute tolerance tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if b < a:
        raise ValueError("need a <= b")
    if a == b:
        return 0.0
    inner = None
    if points is not None:
        inner = sorted(p for p in points if a < p < b)
        inner = inner or None
    out = integrate.quad(
        integrand, a, b, epsabs=tol, epsrel=0.0, limit=max(limit, 2 * len(inner or []) + 50),
        points=inner, full_output=1,
    )
    value, abserr = out[0], out[1]
    if not np.isfinite(value):
        raise ToleranceNotReached(f"quadrature produced {value}")
    if len(out) > 3 and abserr > tol:
        raise ToleranceNotReached(f"quadrature error {abserr:.3g} > {tol:.3g}: {out[3]}")
    return float(value)


def invert_monotone(
    f: Callable[[float], float],
    target: float,
    bracket: Sequence[float],
    tol: float,
) -> float:
    """Solve f(z) = target for strictly monotone f on a bracket (Brent's method)."""
    lo, hi = float(bracket[0]), float(bracket[1])

    def g(z: float) -> float:
        return f(z) - target

    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if np.sign(g_lo) == np.sign(g_hi):
        raise BracketInvalid(f"f - target does not change sign on [{lo}, {hi}]")
    z = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(z)) > tol:
        raise ToleranceNotReached(f"|f(z) - target| = {abs(g(z)):.3g} > {tol:.3g}")
    return float(z)
