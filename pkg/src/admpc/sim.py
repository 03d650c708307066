"""Single-shot adversarial MPC solves and receding-horizon simulation."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import socp
from .errors import AdmpcError, NotODNPError, NotSolvableAtStateError, SolverError
from .odnp import (Region, RegionHalfspaces, SignVector, admissible_regions,
                   check_family_odnp, classify_state, find_uniform_sign_vector,
                   violated_halfspaces)
from .quadform import HomogeneousFamily, homogenize
from .scenario import Scenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Structure:
    """x0-independent sign vector and regions, shared by every step."""

    sigma: SignVector
    regions: RegionHalfspaces


@dataclass(frozen=True)
class StepDiagnostics:
    region: Region
    sigma: SignVector
    sigma_bar: SignVector
    regions: RegionHalfspaces
    family: HomogeneousFamily
    program: socp.ConicProgram
    solution: socp.ConicSolution
    certificate: socp.ExactnessCertificate
    ms: float

    def as_dict(self):
        return {
            "region": self.region.value,
            "sigma": list(self.sigma),
            "sigma_bar": list(self.sigma_bar),
            "halfspaces": self.regions.as_rows(),
            "lambda_size": len(self.family.lambda_set),
            "num_constraints": self.family.m,
            "solution": self.solution.as_dict(),
            "certificate": self.certificate.as_dict(),
            "ms": self.ms,
        }


@dataclass(frozen=True)
class StepResult:
    U: np.ndarray
    diagnostics: StepDiagnostics

    @property
    def objective(self) -> float:
        return self.diagnostics.certificate.qcqp_objective

    @property
    def exact(self) -> bool:
        return self.diagnostics.certificate.exact


def structure(sc: Scenario) -> Structure:
    """Sign vector on {M_i} and the plus/minus regions; raises NotODNPError."""
    st = sc.cache.get("structure")
    if st is None:
        gs = sc.compiled.condensed
        sigma = find_uniform_sign_vector([g.M for g in gs])
        st = sc.cache["structure"] = Structure(sigma, admissible_regions(gs, sigma))
    return st


def solve_step(sc: Scenario, x0=None, backend=None) -> StepResult:
    """Solve the horizon problem at ``x0`` (default: the scenario's x0)."""
    t0 = time.perf_counter()
    x0 = sc.x0 if x0 is None else np.asarray(x0, dtype=float).ravel()
    st = structure(sc)
    region = classify_state(x0, st.regions)
    if region is Region.NEITHER:
        bad = violated_halfspaces(x0, st.regions)
        raise NotSolvableAtStateError(
            f"x0 = {list(map(float, x0))} lies outside both admissible regions "
            f"({len(bad)} halfspaces violated)", bad)
    sigma_bar = st.sigma.minus() if region is Region.MINUS else st.sigma.plus()

    fam = homogenize(sc.compiled.condensed, x0)
    if not check_family_odnp(fam, sigma_bar):
        raise NotODNPError(f"homogeneous family at x0 is not ODNP with respect to "
                           f"{list(sigma_bar)}")
    cp = socp.build_relaxation(fam)
    opts = sc.solver
    sol = socp.solve(cp, opts.feas_tol, opts.gap_tol, opts.max_iter, opts.verbose,
                     backend=backend)
    if sol.status == socp.INFEASIBLE:
        raise SolverError("relaxation is infeasible, so the horizon problem is infeasible",
                          sol.status)
    if sol.status != socp.OPTIMAL:
        raise SolverError(f"conic solver returned {sol.status} after {sol.iterations} "
                          "iterations", sol.status)
    U = socp.reconstruct(sol, sigma_bar)
    cert = socp.certify(fam, sol, U)
    ms = 1e3 * (time.perf_counter() - t0)
    log.debug("solve at x0=%s: region %s objective %.9g verdict %s (%.1f ms)",
              x0, region.value, cert.qcqp_objective, cert.verdict, ms)
    diag = StepDiagnostics(region, st.sigma, sigma_bar, st.regions, fam, cp, sol, cert, ms)
    return StepResult(U, diag)


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    objective: float
    region: str
    sigma_bar: tuple
    verdict: str
    ms: float


@dataclass(frozen=True)
class Trajectory:
    records: tuple
    states: tuple
    nx: int
    nu: int
    error: Optional[dict] = None
    name: str = ""

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def complete(self) -> bool:
        return self.error is None

    def csv_header(self):
        return (["k"] + [f"x{i + 1}" for i in range(self.nx)]
                + [f"u{i + 1}" for i in range(self.nu)]
                + ["objective", "region", "verdict", "ms"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for r in self.records:
            w.writerow([r.k] + [repr(float(v)) for v in r.x] + [repr(float(v)) for v in r.u]
                       + [repr(float(r.objective)), r.region, r.verdict, f"{r.ms:.3f}"])
        return buf.getvalue()

    def as_dict(self):
        return {
            "name": self.name,
            "steps": [{"k": r.k, "x": [float(v) for v in r.x], "u": [float(v) for v in r.u],
                       "objective": float(r.objective), "region": r.region,
                       "sigma_bar": list(r.sigma_bar), "verdict": r.verdict, "ms": r.ms}
                      for r in self.records],
            "states": [[float(v) for v in x] for x in self.states],
            "final_state": [float(v) for v in self.final_state],
            "error": self.error,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


def receding_horizon(sc: Scenario, steps: Optional[int] = None, backend=None) -> Trajectory:
    """Apply the first control of each solve and re-solve from the next state.

    Stops at the first failing step and records the failure in ``error``.
    """
    steps = sc.steps if steps is None else int(steps)
    ds = sc.discrete
    x = np.array(sc.x0, dtype=float)
    states, records, error = [x], [], None
    for k in range(steps):
        try:
            res = solve_step(sc, x, backend=backend)
        except AdmpcError as exc:
            error = {"step": k, "type": type(exc).__name__, "message": str(exc)}
            break
        d = res.diagnostics
        if not res.exact:
            error = {"step": k, "type": "GapDetected",
                     "message": f"certificate gap {d.certificate.gap:.3e}, max violation "
                                f"{d.certificate.max_violation:.3e}"}
            break
        u = res.U[:ds.nu].copy()
        records.append(StepRecord(k, x, u, res.objective, d.region.value,
                                  tuple(d.sigma_bar), d.certificate.verdict, d.ms))
        x = ds.step(x, u)
        states.append(x)
    return Trajectory(tuple(records), tuple(states), ds.nx, ds.nu, error, sc.name)
