import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Any, Dict, List, Optional, Union

from closedloop.errors import ConstraintError, SchemaError
from closedloop.operators import ClosedLoopProblem
from closedloop.primaldual import SaddleInstance
from closedloop.scenarios import FAMILIES, build_instance, derived_constants

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "config.json"

KINDS = ("equilibrium", "flow1", "flow2", "spds", "ispds", "curvature", "w1")

CHECKS = {
    "equilibrium": ("contraction",),
    "flow1": ("speed", "w1_decay"),
    "flow2": ("damping", "lyapunov", "gradient_integral", "w1_decay"),
    "spds": ("speed",),
    "ispds": ("lagrangian",),
    "curvature": ("contraction", "invariant"),
    "w1": (),
}


@dataclass
class ScenarioConfig:
    kind: str
    name: str
    instance: Dict[str, Any]
    solver: Dict[str, Any]
    outputs: Dict[str, Optional[str]] = field(default_factory=dict)
    checks: List[Dict[str, Any]] = field(default_factory=list)
    derived: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _number(block: Dict[str, Any], key: str, path: str, default: Any = None) -> Any:
    value = block.get(key, default)
    if value is None:
        return None
    if not _is_number(value):
        raise SchemaError(f"{path}.{key}", f"expected a finite number, got {value!r}")
    return value


def _vector(block: Dict[str, Any], key: str, path: str, dim: int) -> List[float]:
    value = block.get(key)
    if value is None:
        return [0.0] * dim
    values = value if isinstance(value, list) else [value]
    if not all(_is_number(v) for v in values):
        raise SchemaError(f"{path}.{key}", f"expected numbers, got {value!r}")
    if len(values) != dim:
        raise SchemaError(f"{path}.{key}", f"expected {dim} entries, got {len(values)}")
    return [float(v) for v in values]


def _state_dim(kind: str, instance: Any, params: Dict[str, Any]) -> int:
    if isinstance(instance, SaddleInstance):
        return instance.n_x + instance.n_y
    return int(params.get("dim", 1))


def _solver_defaults(kind: str, instance: Any, params: Dict[str, Any], solver: Dict[str, Any]) -> Dict[str, Any]:
    path = "solver"
    out: Dict[str, Any] = {
        "seed": int(_number(solver, "seed", path, 0)),
        "tol": float(_number(solver, "tol", path, 1e-12 if kind == "curvature" else 1e-10)),
    }
    if out["tol"] <= 0:
        raise ConstraintError("solver.tol", "must be positive")
    if kind in ("curvature", "w1"):
        if kind == "curvature":
            out["samples"] = int(_number(solver, "samples", path, 20))
        return out

    out["max_outer"] = int(_number(solver, "max_outer", path, 500))
    dim = _state_dim(kind, instance, params)
    out["x0"] = _vector(solver, "x0", path, dim)
    if kind == "equilibrium":
        return out

    t0 = float(_number(solver, "t0", path, 1.0))
    if t0 <= 0:
        raise ConstraintError("solver.t0", f"t0 must be positive, got {t0}")
    if isinstance(instance, ClosedLoopProblem):
        mu = instance.mu if instance.mu is not None else float(params["mu"])
        beta_tau = instance.beta_tau
        h_bound = 1.0 / (2.0 * (instance.lipschitz + beta_tau))
    else:
        mu = instance.tilde_mu
        beta_tau = instance.tau * instance.tilde_beta
        h_bound = 1.0 / (2.0 * (instance.tilde_L + instance.K_norm + beta_tau))

    if kind in ("flow1", "spds"):
        rate = max(mu - beta_tau, 1e-12)
        default_h = min(1e-3, h_bound)
        default_span = math.ceil((10.0 if kind == "flow1" else 12.0) / rate)
    else:
        default_h = 1e-3 / math.sqrt(mu)
        default_span = math.ceil(40.0 / math.sqrt(mu))
        out["v0"] = _vector(solver, "v0", path, dim)
    if kind == "flow2":
        omega = _number(solver, "omega", path)
        if omega is None:
            raise SchemaError("solver.omega", "required for flow2")
        if omega < 0:
            raise ConstraintError("solver.omega", "must be nonnegative")
        out["omega"] = float(omega)

    out["t0"] = t0
    out["T"] = float(_number(solver, "T", path, t0 + default_span))
    out["h"] = float(_number(solver, "h", path, default_h))
    if out["T"] <= t0:
        raise ConstraintError("solver.T", f"T = {out['T']} must exceed t0 = {t0}")
    if out["h"] <= 0:
        raise ConstraintError("solver.h", "must be positive")
    return out


def _checks(kind: str, raw: Any) -> List[Dict[str, Any]]:
    allowed = CHECKS[kind]
    if raw is None:
        raw = [{"name": name} for name in allowed]
    if not isinstance(raw, list):
        raise SchemaError("checks", "expected a list")
    out = []
    for i, check in enumerate(raw):
        path = f"checks[{i}]"
        if isinstance(check, str):
            check = {"name": check}
        if not isinstance(check, dict) or check.get("name") not in allowed:
            raise SchemaError(f"{path}.name", f"expected one of {list(allowed)}")
        strict = check.get("strict", True)
        if not isinstance(strict, bool):
            raise SchemaError(f"{path}.strict", "expected a boolean")
        rate_multiplier = float(_number(check, "rate_multiplier", path, 1.0))
        tolerance = float(_number(check, "tolerance", path, 1e-6))
        if rate_multiplier <= 0 or tolerance < 0:
            raise ConstraintError(path, "rate_multiplier must be positive and tolerance nonnegative")
        out.append({"name": check["name"], "rate_multiplier": rate_multiplier, "tolerance": tolerance, "strict": strict})
    return out


class ConfigLoader:
    @staticmethod
    def validate_config(raw: Union[str, Dict[str, Any]]) -> ScenarioConfig:
        """Check a scenario (JSON text or parsed object), fill defaults and echo derived constants."""
        if isinstance(raw, str):
            try:
                raw = json.loads(raw)
            except json.JSONDecodeError as e:
                raise SchemaError("<root>", f"invalid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise SchemaError("<root>", "expected a JSON object")

        kind = raw.get("kind")
        if kind not in KINDS:
            raise SchemaError("kind", f"expected one of {list(KINDS)}, got {kind!r}")

        params = raw.get("instance")
        if not isinstance(params, dict):
            raise SchemaError("instance", "expected an object")
        family_name = params.get("family")
        family = FAMILIES.get(family_name)
        if family is None:
            raise SchemaError("instance.family", f"unknown family {family_name!r}")
        if kind not in family.kinds:
            raise SchemaError("instance.family", f"family {family_name} does not support {kind}")
        for key in family.required:
            if key not in params:
                raise SchemaError(f"instance.{key}", "missing")
        for key in family.positive:
            value = _number(params, key, "instance")
            if value is not None and value <= 0:
                raise ConstraintError(f"instance.{key}", f"must be positive, got {value}")
        try:
            instance = build_instance(params)
        except ValueError as e:
            raise ConstraintError("instance", str(e)) from e

        solver = raw.get("solver") or {}
        outputs = raw.get("outputs") or {}
        if not isinstance(solver, dict):
            raise SchemaError("solver", "expected an object")
        if not isinstance(outputs, dict):
            raise SchemaError("outputs", "expected an object")

        config = ScenarioConfig(
            kind=kind,
            name=str(raw.get("name") or kind),
            instance=dict(params),
            solver=_solver_defaults(kind, instance, params, solver),
            outputs={"csv_path": outputs.get("csv_path"), "json_path": outputs.get("json_path")},
            checks=_checks(kind, raw.get("checks")),
            derived=derived_constants(instance),
        )
        logger.debug("[CONFIG] %s: %s", config.name, config.derived)
        return config

    @staticmethod
    def load_config_file(filename: str = DEFAULT_CONFIG_FILE) -> ScenarioConfig:
        """
        Load and validate a scenario file.

        Only the implicit default config.json falls back to the packaged config-example.json;
        any other missing path raises FileNotFoundError.
        """
        config_path = Path(filename)
        script_dir = Path(__file__).resolve().parent

        # Fallback logic
        if not config_path.exists():
            if filename != DEFAULT_CONFIG_FILE:
                raise FileNotFoundError(f"{filename} not found.")
            fallback_path = script_dir / "config-example.json"
            if not fallback_path.exists():
                raise FileNotFoundError(f"Neither {filename} nor config-example.json found.")
            logger.warning("[CONFIG] %s not found. Falling back to config-example.json.", filename)
            config_path = fallback_path

        with open(config_path, "r", encoding="utf-8") as f:
            try:
                conf: Dict[str, Any] = json.load(f)
            except json.JSONDecodeError as e:
                raise SchemaError("<root>", f"{config_path}: invalid JSON: {e}") from e

        return ConfigLoader.validate_config(conf)

    @staticmethod
    def dict_to_namespace(data: Any) -> Any:
        if isinstance(data, dict):
            return SimpleNamespace(
                **{k: ConfigLoader.dict_to_namespace(v) for k, v in data.items()}
            )
        return data

    @staticmethod
    def save_config_file(config: ScenarioConfig, path: str = DEFAULT_CONFIG_FILE) -> None:
        """Write the normalized scenario (defaults filled) as JSON."""
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config.to_dict(), f, indent=4)


validate_config = ConfigLoader.validate_config
