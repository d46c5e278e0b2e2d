"""
Closed catalog of parametric instance families used by scenario configs and the test fixtures.

Each family has closed-form data (fields, kernels, potentials) so that equilibria and rates are known:

    affine-dirac         B(x, xi) = mu x - xi,          m_x = delta_{eps x + theta0}
    affine-gaussian      B(x, xi) = mu x - xi,          m_x = N(eps x + theta0, sigma^2)
    projected-quadratic  A = N_[lo, hi], B = mu x - xi + c,  m_x = delta_{eps x + theta0}
    scalar-saddle        f = mu_p/2 x^2 - xi x, r = mu_d/2 y^2 - zeta y, coupling K
    graph-walk / space   finite random walk spaces
    distributions        a pair (p, q) for W1 scenarios
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, FrozenSet, Tuple

import numpy as np

from closedloop.curvature import RandomWalkSpace, space_from_dict, space_from_graph
from closedloop.distmap import DecisionMap, Dirac, Gaussian1D, distribution_from_dict
from closedloop.operators import (
    ClosedLoopProblem,
    RandomField,
    UniformModulus,
    normal_cone_box,
    zero_operator,
)
from closedloop.primaldual import SaddleInstance


def _affine_field(mu: float, c=0.0) -> RandomField:
    return RandomField(eval=lambda x, xi: mu * x - xi + c, beta=1.0, lipschitz_L=mu)


def _affine_value(mu: float, c=0.0) -> Callable[[np.ndarray, np.ndarray], float]:
    return lambda x, xi: 0.5 * mu * float(x @ x) - float(xi @ x) + float(np.sum(c * x))


def affine_dirac(
    mu: float = 2.0,
    epsilon: float = 0.5,
    theta0: float = 1.0,
    dim: int = 1,
    uniform: bool = False,
    a_ref: float = 1.0,
) -> ClosedLoopProblem:
    """B(x, xi) = mu x - xi with m_x = delta_{eps x + theta0}; x_bar = theta0 / (mu - eps)."""
    shift = np.full(dim, float(theta0)) if np.ndim(theta0) == 0 else np.asarray(theta0, dtype=float)
    decision_map = DecisionMap(
        kernel=lambda x: Dirac(epsilon * x + shift),
        tau=abs(epsilon),
        name=f"delta({epsilon}x+{theta0})",
    )
    modulus = UniformModulus(phi=lambda t: mu * t, a_ref=a_ref) if uniform else None
    return ClosedLoopProblem(
        A=zero_operator(),
        B=_affine_field(mu),
        map=decision_map,
        mu=None if uniform else mu,
        modulus=modulus,
        f_value=_affine_value(mu),
        name="affine-dirac",
    )


def affine_gaussian(
    mu: float = 2.0,
    epsilon: float = 0.2,
    theta0: float = 1.0,
    sigma: float = 1.0,
) -> ClosedLoopProblem:
    """One-dimensional B(x, xi) = mu x - xi with m_x = N(eps x + theta0, sigma^2)."""
    decision_map = DecisionMap(
        kernel=lambda x: Gaussian1D(epsilon * float(x[0]) + theta0, sigma),
        tau=abs(epsilon),
        name=f"N({epsilon}x+{theta0}, {sigma}^2)",
    )
    return ClosedLoopProblem(
        A=zero_operator(),
        B=_affine_field(mu),
        map=decision_map,
        mu=mu,
        f_value=_affine_value(mu),
        name="affine-gaussian",
    )


def projected_quadratic(
    mu: float = 1.0,
    epsilon: float = 0.0,
    theta0: float = 0.0,
    c: float = 0.0,
    lo: float = 0.0,
    hi: float = float("inf"),
) -> ClosedLoopProblem:
    """A = normal cone of [lo, hi]; B(x, xi) = mu x - xi + c with m_x = delta_{eps x + theta0}."""
    shift = np.array([float(theta0)])
    decision_map = DecisionMap(kernel=lambda x: Dirac(epsilon * x + shift), tau=abs(epsilon), name="delta")
    return ClosedLoopProblem(
        A=normal_cone_box(lo, hi),
        B=_affine_field(mu, c),
        map=decision_map,
        mu=mu,
        f_value=_affine_value(mu, c),
        name="projected-quadratic",
    )


def scalar_saddle(
    mu_p: float = 2.0,
    mu_d: float = 2.0,
    eps_p: float = 0.2,
    eps_d: float = 0.2,
    theta_p: float = 1.0,
    theta_d: float = 0.0,
    K=1.0,
) -> SaddleInstance:
    """Quadratic saddle with Dirac kernels delta_{eps_p x + theta_p} and delta_{eps_d y + theta_d}."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return SaddleInstance(
        f_field=_affine_field(mu_p),
        r_field=_affine_field(mu_d),
        g=zero_operator("g"),
        h=zero_operator("h"),
        K=K,
        map_p=DecisionMap(kernel=lambda x: Dirac(eps_p * x + theta_p), tau=abs(eps_p), name="primal"),
        map_d=DecisionMap(kernel=lambda y: Dirac(eps_d * y + theta_d), tau=abs(eps_d), name="dual"),
        mu_p=mu_p,
        mu_d=mu_d,
        f_value=_affine_value(mu_p),
        r_value=_affine_value(mu_d),
        name="scalar-saddle",
    )


def lazy_two_point(alpha: float = 0.3) -> RandomWalkSpace:
    return RandomWalkSpace(
        points=[0, 1],
        metric=np.array([[0.0, 1.0], [1.0, 0.0]]),
        kernel=np.array([[alpha, 1.0 - alpha], [1.0 - alpha, alpha]]),
    )


def cycle_walk(n: int = 3, walk: str = "simple", alpha: float = 0.0) -> RandomWalkSpace:
    return space_from_graph([[i, (i + 1) % n, 1.0] for i in range(n)], walk=walk, alpha=alpha)


# ----------------------------------------------------------------- registry


@dataclass(frozen=True)
class Family:
    kinds: FrozenSet[str]
    required: Tuple[str, ...]
    positive: Tuple[str, ...]
    build: Callable[[Dict[str, Any]], Any]


_PROBLEM_KINDS = frozenset({"equilibrium", "flow1", "flow2"})
_SADDLE_KINDS = frozenset({"spds", "ispds"})

FAMILIES: Dict[str, Family] = {
    "affine-dirac": Family(
        _PROBLEM_KINDS, ("mu", "epsilon"), ("mu",),
        lambda p: affine_dirac(p["mu"], p["epsilon"], p.get("theta0", 1.0), int(p.get("dim", 1)),
                               bool(p.get("uniform", False)), p.get("a_ref", 1.0)),
    ),
    "affine-gaussian": Family(
        _PROBLEM_KINDS, ("mu", "epsilon"), ("mu", "sigma"),
        lambda p: affine_gaussian(p["mu"], p["epsilon"], p.get("theta0", 1.0), p.get("sigma", 1.0)),
    ),
    "projected-quadratic": Family(
        frozenset({"equilibrium", "flow1"}), ("mu",), ("mu",),
        lambda p: projected_quadratic(p["mu"], p.get("epsilon", 0.0), p.get("theta0", 0.0), p.get("c", 0.0),
                                      p.get("lo", 0.0), p.get("hi", float("inf"))),
    ),
    "scalar-saddle": Family(
        _SADDLE_KINDS, ("mu_p", "mu_d"), ("mu_p", "mu_d"),
        lambda p: scalar_saddle(p["mu_p"], p["mu_d"], p.get("eps_p", 0.2), p.get("eps_d", 0.2),
                                p.get("theta_p", 1.0), p.get("theta_d", 0.0), p.get("K", 1.0)),
    ),
    "graph-walk": Family(
        frozenset({"curvature"}), ("edges",), (),
        lambda p: space_from_graph(p["edges"], p.get("walk", "lazy"), p.get("alpha", 0.5)),
    ),
    "space": Family(
        frozenset({"curvature"}), ("metric", "kernel"), (),
        space_from_dict,
    ),
    "distributions": Family(
        frozenset({"w1"}), ("p", "q"), (),
        lambda p: (distribution_from_dict(p["p"]), distribution_from_dict(p["q"])),
    ),
}


def build_instance(params: Dict[str, Any]) -> Any:
    """Instance for a validated `instance` block (family tag plus constants)."""
    return FAMILIES[params["family"]].build(params)


def derived_constants(instance: Any) -> Dict[str, float]:
    """Constants echoed back into normalized configs and reports."""
    if isinstance(instance, ClosedLoopProblem):
        out = {"beta_tau": instance.beta_tau, "L": instance.lipschitz}
        if instance.mu is not None:
            out["rho"] = instance.rho
        return out
    if isinstance(instance, SaddleInstance):
        return {
            "tilde_mu": instance.tilde_mu,
            "tilde_beta": instance.tilde_beta,
            "tilde_L": instance.tilde_L,
            "tilde_rho": instance.tilde_rho,
            "K_norm": instance.K_norm,
        }
    return {}
