"""Scenario execution: build the instance, run the requested experiment, evaluate checks, emit CSV and JSON."""

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from closedloop.curvature import (
    invariant_measure,
    ricci_global,
    tau_kappa_table,
    verify_contraction,
)
from closedloop.distmap import w1
from closedloop.equilibrium import repeated_minimization
from closedloop.errors import ClosedLoopError, ConditionViolated
from closedloop.flow1 import BoundReport, Trajectory, check_speed_bounds, integrate_smi, w1_decay_report, write_trajectory_csv
from closedloop.flow2 import (
    ISEHDConfig,
    check_damping_condition,
    check_lyapunov_decay,
    estimate_gradient_constant,
    gradient_integral_estimate,
    gradient_ratio,
    integrate_isehd,
    lyapunov_trace,
    w1_decay_report_2nd,
)
from closedloop.load_config import ConfigLoader, ScenarioConfig
from closedloop.primaldual import (
    check_pd_decay,
    check_spds_bounds,
    integrate_ispds,
    integrate_spds,
    pd_equilibrium,
    velocity_decay,
)
from closedloop.scenarios import build_instance
from closedloop.utils import format_verdicts, threads_from_env, to_jsonable

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
CONTRACTION_SLACK = 0.05


class RunResult:
    """Mutable accumulator for one scenario run."""

    def __init__(self):
        self.fields: Dict[str, Any] = {
            "equilibrium": None,
            "fitted_rate": None,
            "theoretical_rate": None,
            "bound_satisfied": True,
            "max_violation": None,
        }
        self.checks: List[Dict[str, Any]] = []
        self.trajectory: Optional[Trajectory] = None
        self.columns: Dict[str, Sequence[float]] = {}

    def add_check(self, request: Dict[str, Any], satisfied: bool, max_violation: Optional[float], **extra) -> None:
        self.checks.append({
            "name": request["name"],
            "strict": request["strict"],
            "satisfied": bool(satisfied),
            "max_violation": max_violation,
            **extra,
        })

    def add_bound(self, request: Dict[str, Any], report: BoundReport, **extra) -> None:
        self.add_check(request, report.satisfied, report.max_violation, fitted_rate=report.fitted_rate, **report.extra, **extra)


def _bound_with_tolerance(report: BoundReport, tolerance: float) -> BoundReport:
    report.satisfied = report.satisfied and report.max_violation <= tolerance
    return report


def _run_equilibrium(config: ScenarioConfig, problem, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    report = repeated_minimization(problem, solver.x0, solver.tol, max_outer=solver.max_outer)
    result.fields.update(equilibrium=report.x_bar, residual=report.residual, ratios=report.ratios,
                         rho=report.rho_declared, outer_iterations=report.outer_iterations)
    for request in config.checks:
        tail = report.ratios[len(report.ratios) // 2:]
        limit = report.rho_declared + CONTRACTION_SLACK
        worst = max(tail) - limit if tail else 0.0
        result.add_check(request, worst <= 0, worst, observed_ratio=max(tail) if tail else None)


def _solve_equilibrium(problem, solver) -> np.ndarray:
    tol = min(solver.tol, solver.h ** 2)
    return repeated_minimization(problem, solver.x0, tol, max_outer=solver.max_outer).x_bar


def _run_flow1(config: ScenarioConfig, problem, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    x_bar = _solve_equilibrium(problem, solver)
    traj = integrate_smi(problem, solver.x0, solver.t0, solver.T, solver.h)
    result.trajectory = traj
    result.columns["distance"] = np.linalg.norm(traj.states - x_bar, axis=1)
    result.fields["equilibrium"] = x_bar
    for request in config.checks:
        if request["name"] == "speed":
            report = check_speed_bounds(traj, x_bar, problem, request["rate_multiplier"], request["tolerance"])
            result.add_bound(request, report)
            if request["rate_multiplier"] == 1.0:
                result.fields["fitted_rate"] = report.fitted_rate
                result.fields["theoretical_rate"] = report.extra.get("theoretical_rate")
        else:
            series = w1_decay_report(traj, problem, x_bar)
            excess = series.values - problem.map.tau * result.columns["distance"]
            worst = float(np.max(excess))
            result.add_check(request, worst <= 1e-9, worst)


def _run_flow2(config: ScenarioConfig, problem, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    x_bar = _solve_equilibrium(problem, solver)
    mu = problem.mu if problem.mu is not None else float(config.instance["mu"])
    isehd = ISEHDConfig(omega=solver.omega, mu=mu, t0=solver.t0, T=solver.T, h=solver.h)
    traj = integrate_isehd(problem, solver.x0, solver.v0, isehd)
    trace = lyapunov_trace(traj, problem, x_bar, isehd)
    result.trajectory = traj
    result.columns.update(V=trace.V, gradnorm=trace.gradnorm)
    result.fields.update(equilibrium=x_bar, theoretical_rate=np.sqrt(mu) / 4.0)
    for request in config.checks:
        name = request["name"]
        if name == "damping":
            ok, margins = check_damping_condition(mu, problem.lipschitz, problem.B.beta, problem.map.tau, solver.omega)
            result.add_check(request, ok, -min(margins["rho_margin"], margins["omega_margin"]), **margins)
        elif name == "lyapunov":
            report = check_lyapunov_decay(trace, mu)
            result.add_bound(request, report)
            result.fields["fitted_rate"] = report.fitted_rate
        elif name == "gradient_integral":
            series = gradient_integral_estimate(traj, problem, x_bar, mu)
            ratio = gradient_ratio(series, mu).values
            half = len(ratio) // 2
            C = estimate_gradient_constant(series, mu)
            growth = float(np.max(ratio[half:]) - np.max(ratio[: half + 1]))
            result.add_check(request, growth <= 0, growth, C=C)
        else:
            report = w1_decay_report_2nd(traj, problem, x_bar, float(trace.V[0]), mu, request["tolerance"])
            result.add_bound(request, report)


def _run_spds(config: ScenarioConfig, instance, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    z_bar = pd_equilibrium(instance, solver.x0, min(solver.tol, solver.h ** 2), max_outer=solver.max_outer).x_bar
    traj = integrate_spds(instance, solver.x0, solver.t0, solver.T, solver.h)
    result.trajectory = traj
    result.fields.update(equilibrium=z_bar, tilde_rho=instance.tilde_rho)
    for request in config.checks:
        report = _bound_with_tolerance(check_spds_bounds(traj, instance, z_bar, request["rate_multiplier"]), request["tolerance"])
        result.add_bound(request, report)
        if request["rate_multiplier"] == 1.0:
            result.fields["fitted_rate"] = report.fitted_rate
            result.fields["theoretical_rate"] = report.extra.get("theoretical_rate")


def _run_ispds(config: ScenarioConfig, instance, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    z_bar = pd_equilibrium(instance, solver.x0, min(solver.tol, solver.h ** 2), max_outer=solver.max_outer).x_bar
    traj = integrate_ispds(instance, solver.x0, solver.v0, solver.t0, solver.T, solver.h)
    result.trajectory = traj
    decay = velocity_decay(traj)
    result.columns["velocity_norm"] = decay.series.values
    result.fields.update(equilibrium=z_bar, tilde_rho=instance.tilde_rho, velocity_rate=decay.fitted_rate,
                         theoretical_rate=np.sqrt(instance.tilde_mu) / 4.0)
    for request in config.checks:
        try:
            report = check_pd_decay(traj, instance, z_bar, tolerance=request["tolerance"])
        except ConditionViolated as e:
            result.add_check(request, False, None, condition=str(e))
            continue
        result.add_bound(request, report)
        result.fields["fitted_rate"] = report.fitted_rate


def _random_measures(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    return rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))


def _run_curvature(config: ScenarioConfig, space, result: RunResult) -> None:
    solver = ConfigLoader.dict_to_namespace(config.solver)
    table = tau_kappa_table(space)
    result.fields.update(kappa=ricci_global(space), tau_hat=table.tau_hat, regime=table.regime)
    for request in config.checks:
        if request["name"] == "contraction":
            rng = np.random.default_rng(solver.seed)
            worst = -np.inf
            for _ in range(solver.samples):
                nu1, nu2 = _random_measures(len(space), rng)
                check = verify_contraction(space, nu1, nu2)
                worst = max(worst, check.lhs - check.rhs)
            result.add_check(request, worst <= 1e-9, float(worst))
        else:
            inv = invariant_measure(space, solver.tol)
            result.fields.update(invariant_measure=inv.upsilon, iterations=inv.iterations)
            result.add_check(request, inv.residual <= solver.tol and inv.rate_ok is not False, inv.residual,
                             rate_ok=inv.rate_ok)


def _run_w1(config: ScenarioConfig, pair, result: RunResult) -> None:
    p, q = pair
    result.fields["w1"] = w1(p, q)


RUNNERS = {
    "equilibrium": _run_equilibrium,
    "flow1": _run_flow1,
    "flow2": _run_flow2,
    "spds": _run_spds,
    "ispds": _run_ispds,
    "curvature": _run_curvature,
    "w1": _run_w1,
}


def build_report(config: ScenarioConfig, csv_path: Optional[str] = None) -> Tuple[Dict[str, Any], int]:
    """Run the scenario and assemble its JSON report. Returns (report, exit status)."""
    started = time.perf_counter()
    report: Dict[str, Any] = {
        "name": config.name,
        "kind": config.kind,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": config.to_dict(),
    }
    result = RunResult()
    try:
        RUNNERS[config.kind](config, build_instance(config.instance), result)
    except ClosedLoopError as e:
        logger.error("[RUN] %s failed: %s", config.name, e)
        report["error"] = {"type": type(e).__name__, "message": str(e)}
        report["runtime_seconds"] = time.perf_counter() - started
        return to_jsonable(report), EXIT_ERROR

    strict = [c for c in result.checks if c["strict"]]
    violations = [c["max_violation"] for c in strict if c["max_violation"] is not None]
    result.fields["bound_satisfied"] = all(c["satisfied"] for c in strict)
    result.fields["max_violation"] = max(violations) if violations else None
    report.update(result.fields)
    report["checks"] = result.checks
    if csv_path and result.trajectory is not None:
        write_trajectory_csv(result.trajectory, csv_path, result.columns)
        report["csv_path"] = csv_path
    report["runtime_seconds"] = time.perf_counter() - started
    status = EXIT_OK if result.fields["bound_satisfied"] else EXIT_VIOLATION
    return to_jsonable(report), status


def run_scenario(
    config: ScenarioConfig,
    csv_path: Optional[str] = None,
    json_path: Optional[str] = None,
    quiet: bool = False,
) -> int:
    """
    Run one scenario, write its CSV trajectory and JSON report.

    Returns:
        0 when every strict check holds, 2 on a check violation, 1 on error.
    """
    csv_path = csv_path or config.outputs.get("csv_path")
    json_path = json_path or config.outputs.get("json_path")
    report, status = build_report(config, csv_path)
    if json_path:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=4)
    if not quiet:
        print("\n".join(format_verdicts(report)))
    logger.info("[RUN] %s finished with status %d", config.name, status)
    return status


def _run_path(path: str, quiet: bool) -> int:
    try:
        config = ConfigLoader.load_config_file(path)
    except (ClosedLoopError, FileNotFoundError) as e:
        if not quiet:
            print(f"[RUN] {path}: {type(e).__name__}: {e}")
        return EXIT_ERROR
    return run_scenario(config, quiet=quiet)


def run_batch(paths: Sequence[str], quiet: bool = False) -> int:
    """Run several scenario files in a process pool capped by CLOSEDLOOP_THREADS; returns the worst status."""
    if len(paths) == 1:
        return _run_path(paths[0], quiet)
    workers = min(len(paths), threads_from_env())
    with ProcessPoolExecutor(max_workers=workers) as pool:
        statuses = list(pool.map(_run_path, paths, [quiet] * len(paths)))
    return max(statuses)
