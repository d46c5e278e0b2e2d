import json

import pytest

from closedloop.argument_parser import get_args, handle_args
from closedloop.errors import ConstraintError, SchemaError
from closedloop.load_config import ConfigLoader, validate_config
from closedloop.runner import run_batch, run_scenario
from closedloop.utils import format_verdicts, threads_from_env

FLOW1 = {
    "kind": "flow1",
    "name": "affine",
    "instance": {"family": "affine-dirac", "mu": 2.0, "epsilon": 0.5, "theta0": 1.0},
}

LAZY_WALK = {
    "kind": "curvature",
    "name": "lazy",
    "instance": {"family": "space", "metric": [[0, 1], [1, 0]], "kernel": [[0.3, 0.7], [0.7, 0.3]]},
}


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def read_report(path):
    with open(path) as f:
        return json.load(f)


def test_validate_fills_defaults_and_echoes_rho():
    config = validate_config(FLOW1)
    assert config.derived["rho"] == pytest.approx(0.25)
    assert config.solver["t0"] == 1.0
    assert config.solver["T"] == 8.0
    assert config.solver["h"] == 1e-3
    assert [c["name"] for c in config.checks] == ["speed", "w1_decay"]


def test_validate_round_trip():
    config = validate_config(FLOW1)
    assert validate_config(json.dumps(config.to_dict())) == config


def test_validate_errors():
    missing = {**FLOW1, "instance": {"family": "affine-dirac", "epsilon": 0.5}}
    with pytest.raises(SchemaError) as excinfo:
        validate_config(missing)
    assert excinfo.value.path == "instance.mu"
    with pytest.raises(ConstraintError):
        validate_config({**FLOW1, "solver": {"t0": 2.0, "T": 1.0}})
    with pytest.raises(ConstraintError):
        validate_config({**FLOW1, "solver": {"t0": 0.0}})
    with pytest.raises(SchemaError):
        validate_config({**FLOW1, "kind": "flow3"})
    with pytest.raises(SchemaError):
        validate_config({**FLOW1, "kind": "flow2"})
    with pytest.raises(SchemaError):
        validate_config("{not json")


def test_affine_flow1_scenario(tmp_path):
    csv_path, json_path = tmp_path / "traj.csv", tmp_path / "report.json"
    status = run_scenario(validate_config(FLOW1), str(csv_path), str(json_path), quiet=True)
    assert status == 0
    report = read_report(json_path)
    assert report["fitted_rate"] == pytest.approx(1.5, rel=0.01)
    assert report["theoretical_rate"] == pytest.approx(1.5)
    assert report["bound_satisfied"] is True
    assert report["equilibrium"][0] == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert report["runtime_seconds"] > 0
    assert csv_path.read_text().splitlines()[0] == "t,x_0,distance"


def test_condition_violating_omega_exits_with_violation(tmp_path):
    config = validate_config({
        "kind": "flow2",
        "instance": {"family": "affine-dirac", "mu": 2.0, "epsilon": 0.2},
        "solver": {"omega": 0.2, "T": 2.0, "h": 1e-3},
        "checks": ["damping"],
    })
    json_path = tmp_path / "report.json"
    assert run_scenario(config, json_path=str(json_path), quiet=True) == 2
    assert read_report(json_path)["checks"][0]["omega_margin"] < 0


def test_non_strict_violation_keeps_exit_zero(tmp_path):
    data = {**FLOW1, "checks": [{"name": "speed"}, {"name": "speed", "rate_multiplier": 2.0, "strict": False}]}
    json_path = tmp_path / "report.json"
    assert run_scenario(validate_config(data), json_path=str(json_path), quiet=True) == 0
    checks = read_report(json_path)["checks"]
    assert checks[0]["satisfied"] and not checks[1]["satisfied"]


def test_curvature_scenario(tmp_path):
    json_path = tmp_path / "report.json"
    assert run_scenario(validate_config(LAZY_WALK), json_path=str(json_path), quiet=True) == 0
    report = read_report(json_path)
    assert report["kappa"] == pytest.approx(0.6, abs=1e-12)
    assert report["invariant_measure"] == pytest.approx([0.5, 0.5], abs=1e-12)


def test_w1_scenario(tmp_path):
    config = validate_config({
        "kind": "w1",
        "instance": {
            "family": "distributions",
            "p": {"type": "finite", "atoms": [[0.0, 0.5], [1.0, 0.5]]},
            "q": {"type": "dirac", "point": [3.0]},
        },
    })
    json_path = tmp_path / "report.json"
    assert run_scenario(config, json_path=str(json_path), quiet=True) == 0
    assert read_report(json_path)["w1"] == pytest.approx(2.5)


def test_module_error_is_reported(tmp_path):
    config = validate_config({**FLOW1, "solver": {"h": 0.5}})
    json_path = tmp_path / "report.json"
    assert run_scenario(config, json_path=str(json_path), quiet=True) == 1
    assert read_report(json_path)["error"]["type"] == "StepTooLarge"


def test_reruns_are_identical(tmp_path):
    outputs = []
    for run in ("a", "b"):
        csv_path, json_path = tmp_path / f"{run}.csv", tmp_path / f"{run}.json"
        run_scenario(validate_config(FLOW1), str(csv_path), str(json_path), quiet=True)
        report = read_report(json_path)
        for key in ("timestamp", "runtime_seconds", "csv_path"):
            report.pop(key)
        outputs.append((csv_path.read_bytes(), report))
    assert outputs[0] == outputs[1]


def test_cli_subcommands(tmp_path, capsys):
    config_path = write_config(tmp_path / "lazy.json", LAZY_WALK)
    json_path = tmp_path / "report.json"

    _, args = get_args(["run", config_path, "--json", str(json_path)])
    assert handle_args(args) == 0
    assert "check invariant: ok" in capsys.readouterr().out

    _, args = get_args(["check", config_path])
    assert handle_args(args) == 0
    assert json.loads(capsys.readouterr().out)["derived"] == {}

    _, args = get_args(["report", str(json_path)])
    assert handle_args(args) == 0
    assert "[RUN] lazy (curvature)" in capsys.readouterr().out


def test_cli_rejects_outputs_for_batches(tmp_path):
    with pytest.raises(SystemExit):
        get_args(["run", "a.json", "b.json", "--csv", "out.csv"])


def test_batch_returns_worst_status(tmp_path, monkeypatch):
    monkeypatch.setenv("CLOSEDLOOP_THREADS", "2")
    good = write_config(tmp_path / "good.json", LAZY_WALK)
    bad = write_config(tmp_path / "bad.json", {**FLOW1, "solver": {"h": 0.5}})
    assert run_batch([good, good], quiet=True) == 0
    assert run_batch([good, bad], quiet=True) == 1


def test_missing_config_path_is_an_error(tmp_path, capsys):
    missing = str(tmp_path / "typo.json")
    with pytest.raises(FileNotFoundError):
        ConfigLoader.load_config_file(missing)
    assert run_batch([missing]) == 1
    assert "FileNotFoundError" in capsys.readouterr().out

    _, args = get_args(["run", missing])
    assert handle_args(args) == 1
    _, args = get_args(["check", missing])
    assert handle_args(args) == 1


def test_default_config_falls_back_to_example(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = ConfigLoader.load_config_file()
    assert config.name == "affine-dirac-flow1"
    solver = ConfigLoader.dict_to_namespace(config.solver)
    assert solver.h == 1e-3


def test_check_writes_normalized_config(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "normalized.json"
    _, args = get_args(["check", "--out", str(out)])
    assert handle_args(args) == 0
    capsys.readouterr()
    saved = ConfigLoader.load_config_file(str(out))
    assert saved == ConfigLoader.load_config_file()
    assert saved.solver["T"] == 8.0


def test_threads_from_env(monkeypatch):
    monkeypatch.setenv("CLOSEDLOOP_THREADS", "3")
    assert threads_from_env() == 3
    monkeypatch.setenv("CLOSEDLOOP_THREADS", "many")
    with pytest.raises(ValueError):
        threads_from_env()


def test_format_verdicts():
    lines = format_verdicts({"name": "x", "kind": "w1", "error": {"type": "NoProbes", "message": "none"}})
    assert lines == ["[RUN] x (w1)", "[RUN]   error NoProbes: none"]
