"""
Probability distributions on a Euclidean sample space, exact W1 distances and decision-dependent maps x -> m_x.

Discrete transport goes through POT's network simplex (ot.emd2). One-dimensional laws use the
quantile representation of W1: the integral over u in (0, 1) of |F_p^{-1}(u) - F_q^{-1}(u)|.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import ot
from numpy.polynomial.hermite_e import hermegauss
from scipy import special, stats

from closedloop.errors import (
    DegenerateMetric,
    IncompatibleVariants,
    InvalidDistribution,
    NoProbes,
    NonFiniteIntegrand,
)
from closedloop.numerics import adaptive_quad, as_vector

logger = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], float]

WEIGHT_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
DEFAULT_QUAD_POINTS = 32
W1_QUAD_TOL = 1e-11
_SQRT_2PI = np.sqrt(2.0 * np.pi)


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


class Distribution:
    """Base class of the distribution variants. Instances are immutable."""

    dim: int

    def nodes(self, quad_points: int = DEFAULT_QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
        """Points (k, dim) and weights (k,) of an exact (or Gaussian-quadrature) representation."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    @property
    def is_discrete(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class FiniteSupport(Distribution):
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(points) == 0 or len(points) != len(weights):
            raise InvalidDistribution("need one weight per atom and at least one atom")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
            raise InvalidDistribution("non-finite atoms or weights")
        if np.any(weights < -WEIGHT_TOL):
            raise InvalidDistribution(f"negative weights {weights[weights < 0]}")
        weights = np.clip(weights, 0.0, None)
        total = weights.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise InvalidDistribution(f"weights sum to {total!r}, expected 1")
        if abs(total - 1.0) > WEIGHT_TOL:
            logger.warning("[DIST] renormalizing weights (sum %.17g)", total)
        weights = weights / total
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_discrete(self) -> bool:
        return True

    def nodes(self, quad_points: int = DEFAULT_QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
        return self.points, self.weights

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.points[idx]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "finite",
            "atoms": [[p.tolist(), float(w)] for p, w in zip(self.points, self.weights)],
        }


@dataclass(frozen=True, eq=False)
class Gaussian1D(Distribution):
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std <= 0:
            raise InvalidDistribution(f"Gaussian1D needs finite mean and std > 0, got {self.mean}, {self.std}")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "std", float(self.std))

    dim = 1

    def nodes(self, quad_points: int = DEFAULT_QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
        z, w = hermegauss(quad_points)
        return (self.mean + self.std * z).reshape(-1, 1), w / _SQRT_2PI

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.std, size=(n, 1))

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "gauss1d", "mean": self.mean, "std": self.std}


@dataclass(frozen=True, eq=False)
class Dirac(Distribution):
    point: np.ndarray

    def __post_init__(self):
        try:
            point = as_vector(self.point)
        except Exception as e:
            raise InvalidDistribution(f"bad Dirac point: {e}") from e
        object.__setattr__(self, "point", point)

    @property
    def dim(self) -> int:
        return len(self.point)

    @property
    def is_discrete(self) -> bool:
        return True

    def nodes(self, quad_points: int = DEFAULT_QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
        return self.point.reshape(1, -1), np.ones(1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(self.point, (n, 1))

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "dirac", "point": self.point.tolist()}


@dataclass(frozen=True, eq=False)
class ProductDistribution(Distribution):
    """Independent product m_1 (x) m_2 (x) ...; samples are concatenated factor samples."""

    factors: Tuple[Distribution, ...]

    def __post_init__(self):
        if len(self.factors) == 0:
            raise InvalidDistribution("product needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    @property
    def is_discrete(self) -> bool:
        return all(f.is_discrete for f in self.factors)

    def nodes(self, quad_points: int = DEFAULT_QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
        points, weights = self.factors[0].nodes(quad_points)
        for factor in self.factors[1:]:
            p2, w2 = factor.nodes(quad_points)
            points = np.hstack([np.repeat(points, len(p2), axis=0), np.tile(p2, (len(points), 1))])
            weights = np.kron(weights, w2)
        return points, weights

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.hstack([f.sample(rng, n) for f in self.factors])

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "product", "factors": [f.to_dict() for f in self.factors]}


def distribution_from_dict(data: Dict[str, Any]) -> Distribution:
    """Build a Distribution from its tagged JSON object."""
    kind = data.get("type") if isinstance(data, dict) else None
    if kind == "finite":
        atoms = data.get("atoms") or []
        points = [np.atleast_1d(np.asarray(a[0], dtype=float)) for a in atoms]
        weights = [float(a[1]) for a in atoms]
        if not points:
            raise InvalidDistribution("finite distribution without atoms")
        return FiniteSupport(np.vstack(points), np.asarray(weights))
    if kind == "gauss1d":
        return Gaussian1D(float(data["mean"]), float(data["std"]))
    if kind == "dirac":
        return Dirac(np.atleast_1d(np.asarray(data["point"], dtype=float)))
    if kind == "product":
        return ProductDistribution(tuple(distribution_from_dict(f) for f in data["factors"]))
    raise InvalidDistribution(f"unknown distribution type {kind!r}")


def distribution_to_dict(p: Distribution) -> Dict[str, Any]:
    return p.to_dict()


def discretize_gaussian(g: Gaussian1D, n: int) -> FiniteSupport:
    """Equal-mass quantile atoms at u = (i + 1/2) / n."""
    u = (np.arange(n) + 0.5) / n
    return FiniteSupport(g.mean + g.std * special.ndtri(u), np.full(n, 1.0 / n))


# ---------------------------------------------------------------- transport


def transport_cost(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Exact optimal transport value between weight vectors a and b for a cost matrix."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    value = ot.emd2(a, b, cost, numItermax=1_000_000)
    return max(0.0, float(value))


def _atoms(p: Distribution) -> Tuple[np.ndarray, np.ndarray]:
    if not p.is_discrete:
        raise IncompatibleVariants(f"{type(p).__name__} has no finite support")
    return p.nodes()


def _is_one_dimensional(p: Distribution) -> bool:
    return p.dim == 1 and not isinstance(p, ProductDistribution)


def _check_metric(metric: Metric, p: Distribution, q: Distribution) -> None:
    for dist in (p, q):
        if dist.is_discrete:
            x = dist.nodes()[0][0]
            if metric(x, x) != 0:
                raise DegenerateMetric(f"metric(x, x) = {metric(x, x)} at {x}")


def _quantile_pieces(p: Distribution) -> np.ndarray:
    """Breakpoints in (0, 1) where the quantile function of a 1-D discrete law jumps."""
    if isinstance(p, FiniteSupport):
        order = np.argsort(p.points[:, 0], kind="stable")
        return np.cumsum(p.weights[order])[:-1]
    return np.empty(0)


def _sorted_atoms_1d(p: Distribution) -> Tuple[np.ndarray, np.ndarray]:
    points, weights = p.nodes()
    order = np.argsort(points[:, 0], kind="stable")
    return points[order, 0], weights[order]


def _w1_gaussian_vs_discrete(g: Gaussian1D, d: Distribution) -> float:
    # Piecewise-exact quantile integral: on each mass block of d its quantile is a constant c,
    # and the integral of |c - F_g^{-1}(u)| over the block is a truncated first moment of g.
    values, weights = _sorted_atoms_1d(d)
    u_hi = np.minimum(np.cumsum(weights), 1.0)
    u_lo = np.concatenate(([0.0], u_hi[:-1]))
    z_lo, z_hi = special.ndtri(u_lo), special.ndtri(u_hi)
    c = (values - g.mean) / g.std
    m = np.clip(c, z_lo, z_hi)

    def pdf(z):
        return np.exp(-0.5 * z * z) / _SQRT_2PI

    left = c * (special.ndtr(m) - u_lo) + pdf(m) - pdf(z_lo)
    right = c * (u_hi - special.ndtr(m)) + pdf(z_hi) - pdf(m)
    return float(g.std * np.sum(left - right))


def _w1_gaussian_pair(p: Gaussian1D, q: Gaussian1D) -> float:
    if p.std == q.std:
        return abs(p.mean - q.mean)
    d_mean, d_std = p.mean - q.mean, p.std - q.std
    kink = float(special.ndtr(-d_mean / d_std))

    def integrand(u: float) -> float:
        return abs(d_mean + d_std * special.ndtri(u))

    return adaptive_quad(integrand, 0.0, 1.0, W1_QUAD_TOL, points=[kink])


def w1(p: Distribution, q: Distribution, metric: Optional[Metric] = None) -> float:
    """
    Exact W1 distance.

    Discrete pairs (FiniteSupport / Dirac / products of those) are solved as a transportation
    problem; 1-D pairs involving a Gaussian use the quantile formula under |.|.
    """
    default_metric = metric is None or metric is euclidean
    metric = metric or euclidean
    _check_metric(metric, p, q)

    if isinstance(p, Dirac) and isinstance(q, Dirac):
        return float(metric(p.point, q.point))

    if p.is_discrete and q.is_discrete:
        if p.dim != q.dim:
            raise IncompatibleVariants(f"dimension mismatch {p.dim} vs {q.dim}")
        if default_metric and p.dim == 1:
            u, u_w = _sorted_atoms_1d(p)
            v, v_w = _sorted_atoms_1d(q)
            return float(stats.wasserstein_distance(u, v, u_w, v_w))
        (xp, wp), (xq, wq) = _atoms(p), _atoms(q)
        cost = np.array([[metric(a, b) for b in xq] for a in xp])
        return transport_cost(wp, wq, cost)

    if not (_is_one_dimensional(p) and _is_one_dimensional(q)):
        raise IncompatibleVariants(f"cannot compare {type(p).__name__} and {type(q).__name__}")
    if not default_metric:
        raise IncompatibleVariants("continuous 1-D laws are compared under |.| only")
    if isinstance(p, Gaussian1D) and isinstance(q, Gaussian1D):
        return _w1_gaussian_pair(p, q)
    if isinstance(p, Gaussian1D):
        return _w1_gaussian_vs_discrete(p, q)
    return _w1_gaussian_vs_discrete(q, p)


def product_w1_bound(p: ProductDistribution, q: ProductDistribution) -> float:
    """Independent-coupling bound sqrt(sum_i W1(p_i, q_i)^2); exact when every factor is a Dirac."""
    if len(p.factors) != len(q.factors):
        raise IncompatibleVariants("products with different numbers of factors")
    return float(np.sqrt(sum(w1(a, b) ** 2 for a, b in zip(p.factors, q.factors))))


# ------------------------------------------------------------- expectations


def expect_vector(p: Distribution, h: Callable[[np.ndarray], Any], quad_points: int = DEFAULT_QUAD_POINTS) -> np.ndarray:
    """E_{xi ~ p} h(xi): exact for discrete laws, Gauss-Hermite with quad_points nodes for Gaussians."""
    points, weights = p.nodes(quad_points)
    total = None
    for point, weight in zip(points, weights):
        if weight == 0.0:
            continue
        value = np.atleast_1d(np.asarray(h(point), dtype=float))
        if not np.all(np.isfinite(value)):
            raise NonFiniteIntegrand(f"integrand is {value} at {point}")
        total = weight * value if total is None else total + weight * value
    return total


def expect_vector_mc(
    p: Distribution,
    h: Callable[[np.ndarray], Any],
    n_samples: int = 10_000,
    seed: int = 0,
) -> np.ndarray:
    """Seeded Monte Carlo estimate of E_{xi ~ p} h(xi)."""
    rng = np.random.default_rng(seed)
    samples = p.sample(rng, n_samples)
    values = np.array([np.atleast_1d(np.asarray(h(s), dtype=float)) for s in samples])
    if not np.all(np.isfinite(values)):
        raise NonFiniteIntegrand("non-finite integrand on a sample")
    return values.mean(axis=0)


# ------------------------------------------------------------ decision maps


@dataclass(frozen=True)
class DecisionMap:
    """The family x -> m_x with its declared W1 sensitivity tau."""

    kernel: Callable[[np.ndarray], Distribution]
    tau: float
    name: str = field(default="")

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    def __call__(self, x) -> Distribution:
        return self.kernel(as_vector(x))


def random_probe_pairs(dim: int, n: int, rng: np.random.Generator, scale: float = 1.0) -> List[Tuple[np.ndarray, np.ndarray]]:
    return [(scale * rng.standard_normal(dim), scale * rng.standard_normal(dim)) for _ in range(n)]


def estimate_tau(
    decision_map: DecisionMap,
    probes: Sequence[Tuple[Any, Any]],
    metric: Optional[Metric] = None,
) -> float:
    """Largest observed ratio W1(m_x, m_y) / ||x - y|| over the probe pairs."""
    best = None
    for x, y in probes:
        x, y = as_vector(x), as_vector(y)
        dist = float(np.linalg.norm(x - y))
        if dist == 0.0:
            logger.warning("[DIST] skipping coincident probe pair %s", x)
            continue
        ratio = w1(decision_map(x), decision_map(y), metric) / dist
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise NoProbes("no distinct probe pairs")
    return best


def check_declared_tau(
    decision_map: DecisionMap,
    probes: Sequence[Tuple[Any, Any]],
    metric: Optional[Metric] = None,
    slack: float = 1e-9,
) -> bool:
    observed = estimate_tau(decision_map, probes, metric)
    ok = observed <= decision_map.tau + slack
    if not ok:
        logger.warning(
            "[DIST] map %s: observed sensitivity %.6g exceeds declared tau %.6g",
            decision_map.name, observed, decision_map.tau,
        )
    return ok
