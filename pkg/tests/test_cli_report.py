import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from converge.cli import main
from converge.errors import ConfigError
from converge.report import (AnalysisConfig, build_config, determinism_hash, exit_code, load_config,
                             parse_config_text, run, to_json)

SCHEMA = json.loads(resources.files("converge").joinpath("data/report_schema.json").read_text())


def _write(tmp_path, text, name="cfg.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _report(system, prop, threads=1, **extra):
    cfg = build_config(dict({"system": system, "property": prop}, **extra))
    return run(cfg, threads)


CASES = [
    ("ex1", "incremental", {"box": 1000, "budget": 400}, "Falsified", "MATCH"),
    ("ex2", "exponential-incremental", {"box": 10, "k0_range": [-20, 20]}, "Certified", "MATCH"),
    ("ex2", "convergent", {}, "Failure", "MATCH"),
    ("ex2", "contraction", {"box": 10, "metric": "identity"}, "Certified", "MATCH"),
    ("ex4", "contraction", {"box": 10, "metric": "expression", "k_range": [0, 100]}, "Violation", "MATCH"),
    ("ex3", "exponential-incremental", {"box": 10, "horizon": 100, "fit_window": [50, 100]}, "Inconclusive",
     "MATCH"),
    ("ex1", "lyapunov-check", {"box": 1000, "samples": 2000}, "Certified", "MATCH"),
]


@pytest.mark.parametrize("system, prop, extra, status, result", CASES)
def test_reports_validate_and_match(system, prop, extra, status, result):
    rep = _report(system, prop, **extra)
    jsonschema.validate(rep, SCHEMA)
    assert rep["verdict"]["status"] == status
    assert rep["expectation"]["result"] == result
    assert exit_code(rep) == 0
    assert rep["determinism_hash"] == determinism_hash(rep)


def test_demidovic_report(affine_file):
    rep = run(load_config(affine_file), 1)
    jsonschema.validate(rep, SCHEMA)
    assert rep["verdict"]["status"] == "Certified"
    assert rep["expectation"] is None
    assert rep["sections"][0]["certificate"]["rho_d"] == 0.5


@pytest.fixture
def affine_file(tmp_path):
    (tmp_path / "affine.sys").write_text("dim 1\nf1 = 0.5*x1 + sin(k)\n")
    return _write(tmp_path, "system = affine.sys\nproperty = demidovic\nbox = 5\nk_range = [0, 10]\n"
                            "per_axis = 11\nrho = 0.5\n")


def test_determinism_across_threads():
    a = _report("ex1", "incremental", threads=1, box=100, budget=1500)
    b = _report("ex1", "incremental", threads=4, box=100, budget=1500)
    assert a["determinism_hash"] == b["determinism_hash"]
    assert a["runtime"] != b["runtime"]
    c = _report("ex1", "incremental", threads=1, box=100, budget=1500, seed=7)
    assert c["determinism_hash"] != a["determinism_hash"]


def test_to_json_round_trip():
    rep = _report("ex2", "contraction", box=1, per_axis=5)
    assert json.loads(to_json(rep)) == rep


# -- config parsing ---------------------------------------------------------

def test_parse_config_text():
    settings, origin = parse_config_text("# c\nsystem = ex1\n\nbox = [-1, 2] # trailing\nwindow = 0, 50\n")
    assert settings == {"system": "ex1", "box": [-1, 2], "window": [0, 50]}
    assert origin == {"system": 2, "box": 4, "window": 5}


@pytest.mark.parametrize("text, message", [
    ("system = ex1\nsystem = ex2\nproperty = convergent\n", "line 2: duplicate key"),
    ("system = ex1\nproperty = convergent\nbogus = 1\n", "line 3: unknown key"),
    ("system = ex1\nproperty = nonsense\n", "unknown property"),
    ("system = ex1\nproperty = convergent\nhorizon = 2.5\n", "horizon expects a number"),
    ("system = ex1\nproperty convergent\n", "line 2: expected"),
    ("property = convergent\n", "missing required key 'system'"),
])
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(_write(tmp_path, text))


def test_registry_defaults_and_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, "system = ex3\nproperty = convergent\nhorizon = 50\n"))
    assert cfg.washout == 10_000 and cfg.horizon == 50
    cfg = load_config(_write(tmp_path, "system = ex3\nproperty = convergent\n"), {"seed": 9})
    assert cfg.seed == 9
    assert isinstance(cfg, AnalysisConfig)


# -- command line -----------------------------------------------------------

def test_cli_run_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, "system = ex2\nproperty = exponential-incremental\nbudget = 300\n")
    out = tmp_path / "rep.json"
    assert main(["run", str(cfg), "--threads", "2", "--out", str(out), "--emit-gnuplot"]) == 0
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, SCHEMA)
    csv = (tmp_path / "rep.falsify_incremental.csv").read_text().splitlines()
    assert csv[0] == "s_bucket,lag,max_sep"
    assert "plot 'rep.falsify_incremental.csv'" in (tmp_path / "rep.gp").read_text()
    assert "MATCH" in capsys.readouterr().err


def test_cli_stdout_and_seed(tmp_path, capsys):
    cfg = _write(tmp_path, "system = ex1\nproperty = incremental\nbox = 100\nbudget = 200\n")
    assert main(["run", str(cfg), "--seed", "3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["config"]["seed"] == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.txt")]) == 2
    bad = _write(tmp_path, "system = ex1\nproperty = convergent\nbogus = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["run", str(bad), "--threads", "0"])
    assert info.value.code == 2
    # certifying analysis on a user system that fails -> 1
    (tmp_path / "grow.sys").write_text("dim 1\nf1 = 2*x1\n")
    cfg = _write(tmp_path, "system = grow.sys\nproperty = contraction\nper_axis = 5\n")
    assert main(["run", str(cfg)]) == 1


def test_cli_examples(capsys):
    assert main(["examples"]) == 0
    out = capsys.readouterr().out
    assert "rule check: ok" in out
    assert main(["examples", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in rows] == ["ex1", "ex2", "ex3", "ex4"]


def test_cli_simulate(capsys):
    assert main(["simulate", "ex2", "--xi", "1", "--steps", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["k,x1", "0,1.0", "1,-0.5", "2,-1.75", "3,-2.875"]


def test_cli_check_lyapunov(tmp_path, capsys):
    cand = _write(tmp_path, "mode incremental\nV = (x1-y1)^2\na1 = s^2\na2 = s^2\na3 = 0.75*s^2\n", "v.txt")
    assert main(["check-lyapunov", "ex2", str(cand), "--box", "5", "--samples", "500"]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "Certified"
    cand = _write(tmp_path, "mode incremental\nV = (x1-y1)^2\na1 = s^2\na2 = s^2\na3 = 0.9*s^2\n", "w.txt")
    assert main(["check-lyapunov", "ex2", str(cand), "--samples", "500"]) == 1
    assert main(["check-lyapunov", "ex2", str(tmp_path / "none.txt")]) == 2


def test_cli_reference_failure_exit(tmp_path, capsys):
    cand = _write(tmp_path, "mode convergent\nV = x1^2\na1 = s^2\na2 = s^2\na3 = 0.5*s^2\n", "v.txt")
    assert main(["check-lyapunov", "ex2", str(cand)]) == 1
    assert "Unbounded" in capsys.readouterr().err
