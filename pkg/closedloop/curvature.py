"""
Finite metric random walk spaces [X, d, m]: Ollivier-Ricci curvature kappa(x, y) = 1 - W1(m_x, m_y) / d(x, y),
kernel convolution, n-step kernels, invariant measures and the W1 contraction of positively curved walks.

Kernel rows are stored as a row-stochastic matrix; W1 between measures uses the exact transport solver
of closedloop.distmap with the space metric as cost.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import networkx as nx
import numpy as np

from closedloop.distmap import RENORMALIZE_TOL, WEIGHT_TOL, transport_cost
from closedloop.errors import (
    DimensionMismatch,
    EqualMeasures,
    InvalidDistribution,
    InvalidSpace,
    NoConvergence,
    SamePoint,
)

logger = logging.getLogger(__name__)

TRIANGLE_CHECK_MAX_N = 50


@dataclass(frozen=True, eq=False)
class RandomWalkSpace:
    points: List[Any]
    metric: np.ndarray
    kernel: np.ndarray

    def __post_init__(self):
        metric = np.asarray(self.metric, dtype=float)
        kernel = np.asarray(self.kernel, dtype=float)
        n = len(self.points)
        if n < 2:
            raise InvalidSpace("a random walk space needs at least two points")
        if metric.shape != (n, n) or kernel.shape != (n, n):
            raise InvalidSpace(f"metric {metric.shape} and kernel {kernel.shape} must both be {n}x{n}")
        if not (np.all(np.isfinite(metric)) and np.all(np.isfinite(kernel))):
            raise InvalidSpace("non-finite metric or kernel entries")
        if not np.allclose(metric, metric.T, rtol=0, atol=1e-12):
            raise InvalidSpace("metric is not symmetric")
        if np.any(np.diag(metric) != 0):
            raise InvalidSpace("metric has a nonzero diagonal")
        off = metric[~np.eye(n, dtype=bool)]
        if np.any(off <= 0):
            raise InvalidSpace("distinct points at nonpositive distance")
        if n <= TRIANGLE_CHECK_MAX_N:
            # d[i, j] <= d[i, k] + d[k, j] for all i, j, k
            slack = metric[:, None, :] - (metric[:, :, None] + metric[None, :, :])
            if np.any(slack > 1e-12):
                raise InvalidSpace("metric violates the triangle inequality")
        else:
            logger.debug("[ORC] skipping exhaustive triangle check for N = %d", n)
        if np.any(kernel < -WEIGHT_TOL):
            raise InvalidSpace("negative kernel weights")
        kernel = np.clip(kernel, 0.0, None)
        sums = kernel.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > RENORMALIZE_TOL):
            raise InvalidSpace(f"kernel rows must sum to 1, got {sums}")
        if np.any(np.abs(sums - 1.0) > WEIGHT_TOL):
            logger.warning("[ORC] renormalizing kernel rows")
            kernel = kernel / sums[:, None]
        object.__setattr__(self, "points", list(self.points))
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "kernel", kernel)

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> Dict[str, Any]:
        return {"points": self.points, "metric": self.metric.tolist(), "kernel": self.kernel.tolist()}


def as_measure(weights: Sequence[float], space: RandomWalkSpace) -> np.ndarray:
    nu = np.asarray(weights, dtype=float).reshape(-1)
    if len(nu) != len(space):
        raise DimensionMismatch(f"measure of length {len(nu)} on a space of {len(space)} points")
    if np.any(nu < -WEIGHT_TOL) or abs(nu.sum() - 1.0) > RENORMALIZE_TOL:
        raise InvalidDistribution("measure weights must be nonnegative and sum to 1")
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum()


def _point(space: RandomWalkSpace, x: int) -> int:
    if isinstance(x, (bool, np.bool_)) or not isinstance(x, (int, np.integer)) or not 0 <= x < len(space):
        raise DimensionMismatch(f"point index {x!r} outside 0..{len(space) - 1}")
    return int(x)


def dirac(space: RandomWalkSpace, x: int) -> np.ndarray:
    x = _point(space, x)
    nu = np.zeros(len(space))
    nu[x] = 1.0
    return nu


def w1_measures(space: RandomWalkSpace, nu1: Sequence[float], nu2: Sequence[float]) -> float:
    return transport_cost(as_measure(nu1, space), as_measure(nu2, space), space.metric)


def ricci_kappa(space: RandomWalkSpace, x: int, y: int) -> float:
    x, y = _point(space, x), _point(space, y)
    if x == y:
        raise SamePoint(f"curvature needs two distinct points, got {x} twice")
    return 1.0 - transport_cost(space.kernel[x], space.kernel[y], space.metric) / space.metric[x, y]


def ricci_matrix(space: RandomWalkSpace) -> np.ndarray:
    """All pairwise kappa(x, y); the diagonal is NaN."""
    n = len(space)
    kappa = np.full((n, n), np.nan)
    for x in range(n):
        for y in range(x + 1, n):
            kappa[x, y] = kappa[y, x] = ricci_kappa(space, x, y)
    return kappa


def ricci_global(space: RandomWalkSpace) -> float:
    return float(np.nanmin(ricci_matrix(space)))


def convolve(nu: Sequence[float], space: RandomWalkSpace) -> np.ndarray:
    """(nu * m)[j] = sum_x nu[x] m_x[j]."""
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if len(nu) != len(space):
        raise DimensionMismatch(f"measure of length {len(nu)} on a space of {len(space)} points")
    return nu @ space.kernel


def nstep(space: RandomWalkSpace, x: int, n: int) -> np.ndarray:
    """m_x^{*n}; n = 0 is the Dirac at x."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    nu = dirac(space, x)
    for _ in range(n):
        nu = convolve(nu, space)
    return nu


@dataclass(frozen=True, eq=False)
class InvariantMeasure:
    upsilon: np.ndarray
    iterations: int
    residual: float
    kappa: float
    rate_ok: Optional[bool]


def invariant_measure(space: RandomWalkSpace, tol: float = 1e-12, max_iter: int = 10_000) -> InvariantMeasure:
    """
    Power iteration of convolve from the uniform measure until W1(upsilon * m, upsilon) <= tol.

    For kappa > 0 the run is also checked against W1(nu * m^{*n}, upsilon) <= (1 - kappa)^n W1(nu, upsilon).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    kappa = ricci_global(space)
    if kappa <= 0:
        logger.warning("[ORC] kappa = %.6g <= 0: invariant measure is best effort", kappa)
    nu = np.full(len(space), 1.0 / len(space))
    history = [nu]
    for k in range(max_iter + 1):
        nxt = convolve(nu, space)
        residual = transport_cost(nxt, nu, space.metric)
        if residual <= tol:
            break
        nu = nxt
        history.append(nu)
    else:
        raise NoConvergence(f"no invariant measure within {max_iter} steps (residual {residual:.3g})")

    rate_ok = None
    if kappa > 0:
        d0 = transport_cost(history[0], nu, space.metric)
        # nu is only tol-invariant, which shifts every distance by at most tol / kappa
        slack = tol * (1.0 + 2.0 / kappa) + 1e-12
        rate_ok = all(
            transport_cost(h, nu, space.metric) <= (1.0 - kappa) ** n * d0 + slack
            for n, h in enumerate(history)
        )
        if not rate_ok:
            logger.warning("[ORC] power iteration slower than the (1 - kappa)^n rate")
    logger.info("[ORC] invariant measure after %d steps, residual %.3e", k, residual)
    return InvariantMeasure(upsilon=nu, iterations=k, residual=residual, kappa=kappa, rate_ok=rate_ok)


class ContractionCheck(NamedTuple):
    lhs: float
    rhs: float
    ok: bool


def verify_contraction(space: RandomWalkSpace, nu1: Sequence[float], nu2: Sequence[float]) -> ContractionCheck:
    """W1(nu1 * m, nu2 * m) <= (1 - kappa) W1(nu1, nu2) with kappa = ricci_global(space)."""
    nu1, nu2 = as_measure(nu1, space), as_measure(nu2, space)
    if np.array_equal(nu1, nu2):
        raise EqualMeasures("contraction needs two different measures")
    lhs = transport_cost(convolve(nu1, space), convolve(nu2, space), space.metric)
    rhs = (1.0 - ricci_global(space)) * transport_cost(nu1, nu2, space.metric)
    return ContractionCheck(lhs, rhs, lhs <= rhs + 1e-9)


@dataclass(frozen=True)
class TauKappaRecord:
    tau_hat: float
    kappa: float
    identity_ok: bool
    bounds_ok: bool
    regime: str


def _regime(tau_hat: float) -> str:
    if tau_hat == 0:
        return "tau = 0, kappa = 1"
    if tau_hat < 1:
        return "tau < 1, kappa > 0"
    if tau_hat == 1:
        return "tau = 1, kappa = 0"
    return "tau > 1, kappa < 0"


def tau_kappa_table(space: RandomWalkSpace) -> TauKappaRecord:
    """Largest ratio W1(m_x, m_y) / d(x, y) next to the global curvature; they satisfy kappa + tau = 1."""
    ratios = 1.0 - ricci_matrix(space)
    tau_hat = float(np.nanmax(ratios))
    kappa = ricci_global(space)
    kappas = 1.0 - ratios
    bounds_ok = bool(np.all((kappas[~np.isnan(kappas)] >= 1.0 - tau_hat - 1e-12) & (kappas[~np.isnan(kappas)] <= 1.0 + 1e-12)))
    return TauKappaRecord(
        tau_hat=tau_hat,
        kappa=kappa,
        identity_ok=abs(kappa + tau_hat - 1.0) <= 1e-12,
        bounds_ok=bounds_ok,
        regime=_regime(tau_hat),
    )


# ---------------------------------------------------------- ingestion


def space_from_graph(
    edges: Sequence[Sequence[float]],
    walk: str = "lazy",
    alpha: float = 0.5,
) -> RandomWalkSpace:
    """
    Shortest-path metric and neighbour walk of a weighted undirected graph.

    Args:
        edges: [i, j, w] triples (w defaults to 1).
        walk: "lazy" keeps mass alpha at x; "simple" is the alpha = 0 walk.
        alpha: laziness in [0, 1).

    Returns:
        RandomWalkSpace with m_x = alpha delta_x + (1 - alpha) uniform(neighbours of x).
    """
    if walk not in ("lazy", "simple"):
        raise InvalidSpace(f"unknown walk {walk!r}")
    if walk == "simple":
        alpha = 0.0
    if not 0.0 <= alpha < 1.0:
        raise InvalidSpace("alpha must lie in [0, 1)")
    G = nx.Graph()
    for edge in edges:
        w = float(edge[2]) if len(edge) > 2 else 1.0
        if w <= 0:
            raise InvalidSpace(f"edge {edge} has nonpositive weight")
        G.add_edge(edge[0], edge[1], weight=w)
    nodes = sorted(G.nodes())
    if len(nodes) < 2 or not nx.is_connected(G):
        raise InvalidSpace("graph must be connected with at least two nodes")
    metric = nx.floyd_warshall_numpy(G, nodelist=nodes, weight="weight")
    index = {node: i for i, node in enumerate(nodes)}
    kernel = np.zeros((len(nodes), len(nodes)))
    for node in nodes:
        i = index[node]
        neighbours = list(G.neighbors(node))
        kernel[i, i] += alpha
        for nbr in neighbours:
            kernel[i, index[nbr]] += (1.0 - alpha) / len(neighbours)
    return RandomWalkSpace(points=nodes, metric=np.asarray(metric), kernel=kernel)


def space_from_dict(data: Dict[str, Any]) -> RandomWalkSpace:
    if "edges" in data:
        return space_from_graph(data["edges"], data.get("walk", "lazy"), float(data.get("alpha", 0.5)))
    try:
        metric = np.asarray(data["metric"], dtype=float)
        return RandomWalkSpace(
            points=list(data.get("points") or range(len(metric))),
            metric=metric,
            kernel=np.asarray(data["kernel"], dtype=float),
        )
    except KeyError as e:
        raise InvalidSpace(f"space definition lacks {e.args[0]!r}") from e
