import csv
import io
import json
import math

import numpy as np
import pytest

from admpc import cli
from admpc.linsys import propagate
from admpc.quadform import evaluate_horizon
from admpc.scenario import BUILTIN, builtin_path, dumps, load, loads, scenario_to_dict


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_variant(tmp_path, name, old, new, stem="variant"):
    text = builtin_path(name).read_text()
    assert old in text
    p = tmp_path / f"{stem}.toml"
    p.write_text(text.replace(old, new))
    return str(p)


# ---------------------------------------------------------------- check

def test_check_double_integrator(capsys):
    code, out, _ = run(capsys, "check", "double_integrator")
    assert code == cli.EXIT_OK
    assert "positive-system structure: applies" in out
    assert "sigma: " + " ".join(["+1"] * 20) in out


def test_check_microgrid(capsys):
    code, out, _ = run(capsys, "check", "microgrid")
    assert code == cli.EXIT_OK
    assert "positive-system structure: does not apply" in out
    assert "objective inertia: 2 negative, 38 zero, 0 positive" in out


def test_check_example1_neither(capsys):
    code, out, _ = run(capsys, "check", "example1", "--x0", "1", "0.5")
    assert code == cli.EXIT_OK
    assert "x0 = [1, 0.5]: neither" in out
    code, out, _ = run(capsys, "check", "example1", "--x0", "1", "0.5", "--horizon", "20")
    assert "x0 = [1, 0.5]: neither" not in out


def test_check_json(capsys):
    code, out, _ = run(capsys, "check", "example1", "--format", "json")
    r = json.loads(out)
    assert r["sigma"] == [1, -1, 1, -1] and r["classification"] == "minus"
    assert r["positive_structure"] == "does not apply"
    plus = [h for h in r["halfspaces"] if h["region"] == "plus"]
    assert len(plus) == 2


def test_check_reports_conflict(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", "state_cost = [[0.0, 1.0], [1.0, 0.0]]",
                      "control_cost = [[1.0, 1.0], [1.0, 1.0]]")
    extra = ('\n[[constraints]]\ncontrol_cost = [[0.0, -1.0], [-1.0, 0.0]]\n'
             'placement = "all"\nbound = 1.0\n')
    with open(p, "a") as fh:
        fh.write(extra)
    code, out, _ = run(capsys, "check", p)
    assert code == cli.EXIT_OK
    assert "sigma: none" in out
    code, _, err = run(capsys, "solve", p)
    assert code == cli.EXIT_NOT_ODNP and "positive in member 0" in err


# ---------------------------------------------------------------- solve / oracle

def test_solve_example1(capsys):
    code, out, _ = run(capsys, "solve", "example1")
    assert code == cli.EXIT_OK
    r = json.loads(out)
    assert r["certificate"]["verdict"] == "exact" and r["region"] == "minus"
    assert len(r["U"]) == 4
    assert r["solution"]["status"] == "optimal"


def test_solve_neither_exit_code(capsys):
    code, out, err = run(capsys, "solve", "example1", "--x0", "1", "0.5")
    assert code == cli.EXIT_NEITHER
    assert "outside both admissible regions" in err and out == ""


def test_solve_solver_failure_exit_code(capsys):
    code, _, err = run(capsys, "solve", "example1", "--max-iter", "2")
    assert code == cli.EXIT_SOLVER
    assert "numerical-failure" in err


def test_solve_then_oracle_agree(capsys):
    _, out, _ = run(capsys, "solve", "example1")
    socp_obj = json.loads(out)["objective"]
    code, out, _ = run(capsys, "oracle", "example1")
    assert code == cli.EXIT_OK
    r = json.loads(out)
    assert r["certified_bound"] is False
    assert abs(r["objective"] - socp_obj) <= 1e-3 * abs(socp_obj)


def test_oracle_dimension_exit_code(capsys):
    code, out, err = run(capsys, "oracle", "microgrid")
    assert code == cli.EXIT_ORACLE and "n <= 6" in err and out == ""


def test_oracle_derives_box_when_absent(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", "[oracle]\nbox = [-1.0, 1.0]\n", "")
    code, out, _ = run(capsys, "oracle", p)
    assert code == cli.EXIT_OK
    r = json.loads(out)
    # the per-step bound 0.5 is tighter than the total bound 2/3
    np.testing.assert_allclose(r["box"], [[-math.sqrt(0.5) * 1.1, math.sqrt(0.5) * 1.1]] * 4)


def test_oracle_infeasible_exit_code(capsys):
    # two steps of thrust cannot leave the safety ellipse
    code, out, err = run(capsys, "oracle", "double_integrator", "--horizon", "2")
    assert code == cli.EXIT_ORACLE and "no feasible grid point" in err and out == ""


# ---------------------------------------------------------------- simulate

def test_simulate_example1_csv(capsys):
    code, out, _ = run(capsys, "simulate", "example1")
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 10
    assert [int(r["k"]) for r in rows] == list(range(10))
    assert all(r["verdict"] == "exact" for r in rows)
    assert rows[0]["x1"] == "0.0" and rows[0]["x2"] == "0.1"


def test_simulate_json_and_steps_override(capsys):
    code, out, _ = run(capsys, "simulate", "example1", "--format", "json", "--steps", "2")
    d = json.loads(out)
    assert code == cli.EXIT_OK and len(d["steps"]) == 2 and len(d["states"]) == 3


def test_simulate_partial_failure(capsys):
    code, out, err = run(capsys, "simulate", "example1", "--x0", "1", "0.5")
    assert code == cli.EXIT_NEITHER
    assert "step 0" in err
    assert out.strip() == "k,x1,x2,u1,u2,objective,region,verdict,ms"


# ---------------------------------------------------------------- discretize

def test_discretize_microgrid(capsys):
    code, out, _ = run(capsys, "discretize", "microgrid")
    assert code == cli.EXIT_OK
    r = json.loads(out)
    A = [[0.6282, 0.2221, 0.1026], [0.2221, 0.4171, 0.3646], [0.1026, 0.3646, 0.5663]]
    B = [[0.3941, 0.0213], [0.0716, 0.1266], [0.0213, 0.3616]]
    np.testing.assert_allclose(r["A"], A, atol=5e-5)
    np.testing.assert_allclose(r["B"], B, atol=5e-5)
    assert r["positive"] is True


def test_discretize_text_has_ten_digits(capsys):
    code, out, _ = run(capsys, "discretize", "microgrid", "--format", "text")
    assert code == cli.EXIT_OK
    assert "0.6281853711" in out


def test_numeric_output_precision(capsys):
    _, out, _ = run(capsys, "solve", "example1")
    obj = json.loads(out)["objective"]
    assert repr(obj) in out
    assert len(repr(abs(obj)).replace("0.", "", 1).lstrip("0")) >= 9


def test_csv_format_rejected_for_json_commands(capsys):
    code, _, err = run(capsys, "solve", "example1", "--format", "csv")
    assert code == 2 and "CSV" in err


# ---------------------------------------------------------------- errors

def test_schema_error_names_field(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", "horizon = 2", "horizon = 0")
    code, _, err = run(capsys, "check", p)
    assert code == cli.EXIT_SCHEMA
    assert "field horizon" in err and "minimum" in err


def test_schema_error_unknown_key(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", 'placement = "each"', 'placemnt = "each"')
    code, _, err = run(capsys, "check", p)
    assert code == cli.EXIT_SCHEMA and "field constraints/0" in err and "placemnt" in err


def test_syntax_error_names_line(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", "steps = 10", "steps = = 10")
    code, _, err = run(capsys, "check", p)
    assert code == cli.EXIT_SCHEMA and "line 4" in err


def test_dimension_error_is_schema_error(tmp_path, capsys):
    p = write_variant(tmp_path, "example1", "x0 = [0.0, 0.1]", "x0 = [0.0, 0.1, 0.2]")
    code, _, err = run(capsys, "check", p)
    assert code == cli.EXIT_SCHEMA and "x0 has length 3" in err


def test_missing_file(capsys):
    code, _, err = run(capsys, "check", "no_such_file.toml")
    assert code == cli.EXIT_SCHEMA and "not found" in err


def test_bad_override(capsys):
    code, _, err = run(capsys, "check", "example1", "--x0", "1")
    assert code == cli.EXIT_SCHEMA and "x0" in err


def test_jobs_must_be_positive(capsys):
    code, _, err = run(capsys, "check", "example1", "--jobs", "0")
    assert code == 2 and "--jobs" in err


# ---------------------------------------------------------------- output routing

def test_out_file(tmp_path, capsys):
    target = tmp_path / "traj.csv"
    code, out, _ = run(capsys, "simulate", "example1", "--steps", "2", "--out", str(target))
    assert code == cli.EXIT_OK and out == ""
    assert len(target.read_text().strip().splitlines()) == 3


def test_jobs_with_out_directory(tmp_path, capsys):
    code, _, _ = run(capsys, "solve", *BUILTIN, "--jobs", "3", "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_OK
    for name in BUILTIN:
        r = json.loads((tmp_path / "o" / f"{name}.solve.json").read_text())
        assert r["certificate"]["verdict"] == "exact"


def test_jobs_output_independent_of_workers(capsys):
    _, serial, _ = run(capsys, "check", *BUILTIN, "--format", "json")
    _, parallel, _ = run(capsys, "check", *BUILTIN, "--format", "json", "--jobs", "3")
    assert serial == parallel


def test_worst_exit_code_wins(capsys):
    code, _, _ = run(capsys, "oracle", "example1", "microgrid", "--jobs", "2")
    assert code == cli.EXIT_ORACLE


def test_log_level_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("ADMPC_LOG", "debug")
    code, _, _ = run(capsys, "check", "example1")
    assert code == cli.EXIT_OK


# ---------------------------------------------------------------- scenarios

def _numeric_fields(data, prefix=""):
    out = {}
    if isinstance(data, dict):
        for k, v in data.items():
            out.update(_numeric_fields(v, f"{prefix}/{k}"))
    elif isinstance(data, list):
        for i, v in enumerate(data):
            out.update(_numeric_fields(v, f"{prefix}/{i}"))
    elif isinstance(data, (int, float)) and not isinstance(data, bool):
        out[prefix] = data
    return out


@pytest.mark.parametrize("name", BUILTIN)
def test_round_trip(name):
    sc = load(name)
    again = loads(dumps(sc))
    a, b = _numeric_fields(scenario_to_dict(sc)), _numeric_fields(scenario_to_dict(again))
    assert a.keys() == b.keys() and a == b
    assert dumps(again) == dumps(sc)
    for ga, gb in zip(sc.compiled.condensed, again.compiled.condensed):
        np.testing.assert_array_equal(ga.M, gb.M)
        np.testing.assert_array_equal(ga.Nmat, gb.Nmat)


def constraint_values(sc, U, x0=None):
    """Constraint values by label at the trajectory from x0 driven by U."""
    x0 = sc.x0 if x0 is None else np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    X = propagate(sc.discrete, x0, U)
    comp = sc.compiled
    return {lab: evaluate_horizon(f, X, U) for lab, f in zip(comp.labels[1:], comp.functions[1:])}


def test_example1_constraints_spot_check():
    sc = load("example1")
    assert len(sc.compiled.functions) == 7
    # u(0) on the inner circle, u(1) on the outer circle
    U = [math.sqrt(0.2), 0.0, 0.0, math.sqrt(0.5)]
    v = constraint_values(sc, U)
    assert v["annulus[0]"] == pytest.approx(0.0, abs=1e-15)    # 0.2 - |u0|^2
    assert v["annulus[1]"] == pytest.approx(-0.3, abs=1e-15)   # |u0|^2 - 0.5
    assert v["annulus[2]"] == pytest.approx(-0.3, abs=1e-15)
    assert v["annulus[3]"] == pytest.approx(0.0, abs=1e-15)
    assert v["energy[0]"] == pytest.approx(-0.7, abs=1e-15)    # 0 - |U|^2
    assert v["energy[1]"] == pytest.approx(0.7 - 2.0 / 3.0, abs=1e-15)  # |U|^2 - N/3
    assert sc.steps == 10 and list(sc.x0) == [0.0, 0.1]


def test_double_integrator_constraints_spot_check():
    sc = load("double_integrator")
    labels = sc.compiled.labels[1:]
    assert labels[:2] == ("ellipse-wide[0]", "ellipse-tall[0]")
    assert len(labels) == 2 + 2 * sc.horizon
    # a constant acceleration drift leaves a closed-form terminal state; probe with it
    U = np.tile([0.3, 0.0], sc.horizon)
    X = propagate(sc.discrete, sc.x0, U)
    px, py = X[-4], X[-3]
    v = constraint_values(sc, U)
    assert v["ellipse-wide[0]"] == pytest.approx(1.0 - (px ** 2 + 4 * py ** 2), abs=1e-14)
    assert v["ellipse-tall[0]"] == pytest.approx(1.0 - (4 * px ** 2 + py ** 2), abs=1e-14)
    assert v["thrust-annulus[0]"] == pytest.approx(0.04 - 0.09, abs=1e-15)
    assert v["thrust-annulus[1]"] == pytest.approx(0.09 - 0.25, abs=1e-15)


def test_microgrid_constraints_spot_check():
    sc = load("microgrid")
    assert sc.maximize and sc.horizon == 20
    labels = sc.compiled.labels[1:]
    assert len(labels) == 20
    U = np.zeros(40)
    U[6:8] = [0.6, 0.8]
    v = constraint_values(sc, U)
    assert v["current-limit[3]"] == pytest.approx(0.0, abs=1e-15)
    assert v["current-limit[0]"] == pytest.approx(-1.0, abs=1e-15)
    # maximisation is stored as the negated disagreement
    X = propagate(sc.discrete, sc.x0, U)
    xN = X[-3:]
    L = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    obj = evaluate_horizon(sc.compiled.functions[0], X, U)
    assert obj == pytest.approx(-(xN @ L @ xN), abs=1e-14)
