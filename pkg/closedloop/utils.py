import logging
import os
from typing import Any, Dict, List

import numpy as np

from closedloop.numerics import TimeSeries

_handler = None


def enable_verbose(enabled: bool = True, debug: bool = False) -> None:
    """Attach a stream handler to the closedloop logger (INFO, or DEBUG when asked); False detaches it."""
    global _handler
    logger = logging.getLogger("closedloop")
    if _handler is not None:
        logger.removeHandler(_handler)
        _handler = None
    if not enabled:
        logger.setLevel(logging.WARNING)
        return
    _handler = logging.StreamHandler()
    _handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.addHandler(_handler)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)


def threads_from_env(default: int = 0) -> int:
    """Worker cap from CLOSEDLOOP_THREADS, else the CPU count."""
    raw = os.environ.get("CLOSEDLOOP_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"CLOSEDLOOP_THREADS must be an integer, got {raw!r}")
        if value >= 1:
            return value
    return default or os.cpu_count() or 1


def to_jsonable(obj: Any) -> Any:
    """For Reports: convert numpy scalars/arrays and time series into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, TimeSeries):
        return {"times": to_jsonable(obj.times), "values": to_jsonable(obj.values)}
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else None
    return obj


def format_verdicts(report: Dict[str, Any]) -> List[str]:
    """For Printing: one line per check plus a header, in the style of the CLI summary."""
    lines = [f"[RUN] {report.get('name')} ({report.get('kind')})"]
    if "error" in report:
        lines.append(f"[RUN]   error {report['error']['type']}: {report['error']['message']}")
        return lines
    if report.get("equilibrium") is not None:
        lines.append(f"[RUN]   equilibrium: {report['equilibrium']}")
    for key in ("fitted_rate", "theoretical_rate", "kappa", "w1"):
        if report.get(key) is not None:
            lines.append(f"[RUN]   {key}: {report[key]:.6g}")
    for check in report.get("checks", []):
        mark = "ok" if check["satisfied"] else ("VIOLATED" if check["strict"] else "violated (not strict)")
        violation = check.get("max_violation")
        detail = f" max_violation={violation:.3e}" if isinstance(violation, float) else ""
        lines.append(f"[RUN]   check {check['name']}: {mark}{detail}")
    return lines
