import csv
import io
import json

import numpy as np
import pytest

from admpc import sim, socp
from admpc.errors import NotODNPError, NotSolvableAtStateError
from admpc.linsys import propagate
from admpc.odnp import Region
from admpc.quadform import StageSpec, evaluate_horizon
from admpc.scenario import ConstraintSpec, load


@pytest.fixture(scope="module")
def example1():
    return load("example1")


def horizon_values(sc, x0, U):
    """Every compiled function (objective first) at the trajectory driven by U."""
    X = propagate(sc.discrete, x0, U)
    return np.array([evaluate_horizon(f, X, U) for f in sc.compiled.functions])


def test_solve_step_example1(example1):
    res = sim.solve_step(example1)
    d = res.diagnostics
    assert d.region is Region.MINUS
    assert d.sigma_bar == d.sigma.minus()
    assert res.exact and d.certificate.verdict == socp.EXACT
    assert d.solution.status == socp.OPTIMAL
    vals = horizon_values(example1, example1.x0, res.U)
    assert res.objective == pytest.approx(vals[0], abs=1e-10)
    assert vals[1:].max() <= 1e-6
    json.dumps(d.as_dict())


def test_neither_at_short_horizon(example1):
    with pytest.raises(NotSolvableAtStateError) as exc:
        sim.solve_step(example1, [1.0, 0.5])
    assert exc.value.violated
    assert "outside both admissible regions" in str(exc.value)


def test_solvable_at_long_horizon(example1):
    sc = example1.replace(horizon=20)
    res = sim.solve_step(sc, [1.0, 0.5])
    assert res.diagnostics.region is not Region.NEITHER
    assert res.exact
    assert res.U.size == 40


def test_structure_is_cached(example1):
    sc = example1.replace()
    st = sim.structure(sc)
    assert sim.structure(sc) is st
    sim.solve_step(sc)
    assert sc.cache["structure"] is st
    # replace() starts a fresh cache
    assert "structure" not in sc.replace(horizon=3).cache


def test_both_region_uses_plus():
    # no state enters the objective or the constraints, so every x0 lies in both regions
    sc = load("example1")
    energy = StageSpec(control_cost=np.eye(2), kind="objective")
    ball = ConstraintSpec(StageSpec(control_cost=np.eye(2)), "<=", 1.0)
    sc = sc.replace(objective=(energy,), constraints=(ball,), maximize=True)
    res = sim.solve_step(sc, [0.3, -0.2])
    assert res.diagnostics.region is Region.BOTH
    assert res.diagnostics.sigma_bar == res.diagnostics.sigma.plus()
    assert res.objective == pytest.approx(-1.0, abs=1e-7)


def test_not_odnp_scenario():
    sc = load("example1")
    cross = StageSpec(control_cost=np.array([[1.0, 1.0], [1.0, 1.0]]), kind="objective")
    anti = ConstraintSpec(StageSpec(control_cost=np.array([[0.0, -1.0], [-1.0, 0.0]])), "<=", 1.0)
    sc = sc.replace(objective=(cross,), constraints=(anti,) + sc.constraints)
    with pytest.raises(NotODNPError):
        sim.solve_step(sc)


def test_receding_horizon_example1(example1):
    tr = sim.receding_horizon(example1)
    assert tr.complete and len(tr.records) == 10 and len(tr.states) == 11
    assert all(r.verdict == socp.EXACT for r in tr.records)
    assert [r.k for r in tr.records] == list(range(10))
    A, B = example1.discrete.A, example1.discrete.B
    for r, nxt in zip(tr.records, tr.states[1:]):
        # chain integrity is exact: states are the recorded propagation
        np.testing.assert_array_equal(nxt, A @ r.x + B @ r.u)
    for r, x in zip(tr.records, tr.states):
        assert r.x is x


def test_applied_controls_are_feasible(example1):
    tr = sim.receding_horizon(example1, steps=4)
    for r in tr.records:
        res = sim.solve_step(example1, r.x)
        np.testing.assert_allclose(res.U[:2], r.u, atol=1e-12)
        vals = horizon_values(example1, r.x, res.U)
        assert vals[1:].max() <= 1e-6
        # step-0 annulus slice on the applied control alone
        assert 0.2 - 1e-6 <= r.u @ r.u <= 0.5 + 1e-6


def test_zero_steps(example1):
    tr = sim.receding_horizon(example1, steps=0)
    assert tr.records == () and len(tr.states) == 1
    np.testing.assert_array_equal(tr.final_state, example1.x0)
    assert tr.complete
    assert tr.to_csv().strip() == ",".join(tr.csv_header())


def test_partial_trajectory_on_failure(example1):
    tr = sim.receding_horizon(example1.replace(x0=np.array([1.0, 0.5])), steps=3)
    assert not tr.complete
    assert tr.records == () and len(tr.states) == 1
    assert tr.error["step"] == 0 and tr.error["type"] == "NotSolvableAtStateError"


def test_trajectory_serialisation(example1):
    tr = sim.receding_horizon(example1, steps=3)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["k", "x1", "x2", "u1", "u2", "objective", "region", "verdict", "ms"]
    assert len(rows) == 4
    for row, r in zip(rows[1:], tr.records):
        assert int(row[0]) == r.k
        # repr round-trips floats exactly
        assert [float(v) for v in row[1:3]] == list(r.x)
        assert [float(v) for v in row[3:5]] == list(r.u)
        assert row[6] == r.region and row[7] == "exact"
    d = json.loads(tr.to_json())
    assert len(d["steps"]) == 3 and len(d["states"]) == 4
    assert d["final_state"] == [float(v) for v in tr.final_state]
    assert d["steps"][0]["sigma_bar"] == list(tr.records[0].sigma_bar)
    assert d["error"] is None


def test_double_integrator_single_shot():
    sc = load("double_integrator")
    tr = sim.receding_horizon(sc)
    assert tr.complete and len(tr.records) == sc.steps == 1
    res = sim.solve_step(sc)
    assert res.exact and np.all(res.U >= 0)
    assert list(res.diagnostics.sigma) == [1] * 20


def test_microgrid_objective_spectrum():
    sc = load("microgrid")
    eig = np.linalg.eigvalsh(sc.compiled.condensed[0].M)
    assert np.sum(eig < -1e-8) == 2
    assert np.sum(np.abs(eig) <= 1e-8) == eig.size - 2


def test_microgrid_mixed_signs():
    sc = load("microgrid")
    res = sim.solve_step(sc)
    assert res.exact
    assert np.any(res.U > 1e-6) and np.any(res.U < -1e-6)
    vals = horizon_values(sc, sc.x0, res.U)
    assert vals[1:].max() <= 1e-6
