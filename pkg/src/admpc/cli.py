"""Command-line front end: ``admpc {check|solve|simulate|oracle|discretize}``.

Exit codes: 0 success, 2 usage, 3 scenario/schema error, 4 not ODNP,
5 initial state outside both regions, 6 solver failure or gap detected,
7 oracle failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from . import sim
from .errors import (InvalidInputError, NotODNPError, NotSolvableAtStateError, OracleError,
                     ScenarioError, SolverError)
from .linsys import is_positive
from .odnp import check_positive_structure
from .quadform import homogenize
from .scenario import discrete_report, load

EXIT_OK = 0
EXIT_SCHEMA = 3
EXIT_NOT_ODNP = 4
EXIT_NEITHER = 5
EXIT_SOLVER = 6
EXIT_ORACLE = 7

INERTIA_TOL = 1e-8

_EXIT_FOR = (
    (ScenarioError, EXIT_SCHEMA),
    (InvalidInputError, EXIT_SCHEMA),
    (NotODNPError, EXIT_NOT_ODNP),
    (NotSolvableAtStateError, EXIT_NEITHER),
    (SolverError, EXIT_SOLVER),
    (OracleError, EXIT_ORACLE),
)


class CommandError(Exception):
    def __init__(self, message, code, payload=None):
        super().__init__(message)
        self.code = code
        self.payload = payload


def _fmt(v) -> str:
    return f"{float(v):.10g}"


def _matrix_text(M) -> str:
    return "\n".join("  " + "  ".join(f"{float(v):>16.10g}" for v in row)
                     for row in np.atleast_2d(M))


def _apply_overrides(sc, args):
    changes = {}
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    if args.x0 is not None:
        changes["x0"] = np.array(args.x0, dtype=float)
    if args.steps is not None:
        changes["steps"] = args.steps
    solver = {}
    for k in ("feas_tol", "gap_tol", "max_iter"):
        v = getattr(args, k)
        if v is not None:
            solver[k] = v
    if solver:
        changes["solver"] = dataclasses.replace(sc.solver, **solver)
    if not changes:
        return sc
    try:
        new = sc.replace(**changes)
        new.compiled
    except InvalidInputError as exc:
        raise ScenarioError(str(exc)) from exc
    return new


# ---------------------------------------------------------------- commands

def cmd_check(sc, args):
    comp = sc.compiled
    ds = comp.system
    structure = check_positive_structure(ds, comp.functions)
    eig = np.linalg.eigvalsh(comp.condensed[0].M)
    inertia = {"negative": int(np.sum(eig < -INERTIA_TOL)),
               "zero": int(np.sum(np.abs(eig) <= INERTIA_TOL)),
               "positive": int(np.sum(eig > INERTIA_TOL))}
    report = {
        "scenario": sc.name,
        "horizon": sc.horizon,
        "n": comp.condensed[0].n,
        "constraints": len(comp.functions) - 1,
        "positive_system": is_positive(ds),
        "positive_structure": "applies" if structure.applies else "does not apply",
        "positive_structure_reason": structure.violation,
        "objective_inertia": inertia,
        "objective_eigenvalues": [float(v) for v in eig],
        "x0": [float(v) for v in sc.x0],
    }
    try:
        st = sim.structure(sc)
    except NotODNPError as exc:
        report["sigma"] = None
        report["conflict"] = str(exc)
        return report
    report["sigma"] = list(st.sigma)
    report["halfspaces"] = st.regions.as_rows()
    region = sim.classify_state(sc.x0, st.regions)
    report["classification"] = region.value
    return report


def _check_text(r):
    lines = [f"scenario: {r['scenario']}  (N = {r['horizon']}, n = {r['n']}, "
             f"{r['constraints']} constraints)",
             f"positive system: {'yes' if r['positive_system'] else 'no'}",
             f"positive-system structure: {r['positive_structure']}"]
    if r["positive_structure_reason"]:
        lines.append(f"  reason: {r['positive_structure_reason']}")
    inert = r["objective_inertia"]
    lines.append(f"objective inertia: {inert['negative']} negative, {inert['zero']} zero, "
                 f"{inert['positive']} positive")
    if r["sigma"] is None:
        lines.append(f"sigma: none ({r['conflict']})")
        return "\n".join(lines)
    lines.append("sigma: " + " ".join(f"{s:+d}" for s in r["sigma"]))
    lines.append("plus-region halfspaces (a.x + b <= 0):")
    for h in r["halfspaces"]:
        if h["region"] == "plus":
            lines.append("  a = [" + ", ".join(_fmt(v) for v in h["a"]) + f"]  b = {_fmt(h['b'])}")
    lines.append(f"x0 = [{', '.join(_fmt(v) for v in r['x0'])}]: {r['classification']}")
    return "\n".join(lines)


def cmd_solve(sc, args):
    res = sim.solve_step(sc)
    d = res.diagnostics
    out = {"scenario": sc.name, "x0": [float(v) for v in sc.x0],
           "U": [float(v) for v in res.U], "objective": float(res.objective),
           **d.as_dict()}
    if not res.exact:
        raise CommandError(f"gap detected: {d.certificate.gap:.3e}", EXIT_SOLVER, out)
    return out


def cmd_simulate(sc, args):
    tr = sim.receding_horizon(sc)
    if tr.error is not None:
        code = {"NotODNPError": EXIT_NOT_ODNP,
                "NotSolvableAtStateError": EXIT_NEITHER}.get(tr.error["type"], EXIT_SOLVER)
        raise CommandError(f"step {tr.error['step']}: {tr.error['message']}", code, tr)
    return tr


def _oracle_box(sc, fam):
    box = sc.oracle.box
    if box is None:
        return oracle_mod.derive_box(fam)
    box = np.asarray(box, dtype=float)
    if box.shape[0] == 1:
        box = np.repeat(box, fam.n, axis=0)
    return box


def cmd_oracle(sc, args):
    fam = homogenize(sc.compiled.condensed, sc.x0)
    kw = {}
    if sc.oracle.schedule is not None:
        kw["schedule"] = sc.oracle.schedule
    res = oracle_mod.brute_force(fam, _oracle_box(sc, fam), **kw)
    return {"scenario": sc.name, "x0": [float(v) for v in sc.x0], **res.as_dict()}


def cmd_discretize(sc, args):
    return {"scenario": sc.name, **discrete_report(sc)}


def _discretize_text(r):
    return (f"dt = {r['dt']}\nA =\n{_matrix_text(r['A'])}\nB =\n{_matrix_text(r['B'])}\n"
            f"positive: {'yes' if r['positive'] else 'no'}")


COMMANDS = {
    "check": (cmd_check, "text"),
    "solve": (cmd_solve, "json"),
    "simulate": (cmd_simulate, "csv"),
    "oracle": (cmd_oracle, "json"),
    "discretize": (cmd_discretize, "json"),
}


def _render(command, result, fmt):
    if isinstance(result, sim.Trajectory):
        if fmt == "csv":
            return result.to_csv()
        if fmt == "text":
            return result.to_csv().replace(",", "  ")
        return result.to_json(indent=2) + "\n"
    if fmt == "text":
        if command == "check":
            return _check_text(result) + "\n"
        if command == "discretize":
            return _discretize_text(result) + "\n"
    if fmt == "csv":
        raise CommandError(f"{command} does not produce CSV output", 2)
    return json.dumps(result, indent=2) + "\n"


def run_one(command, path, args):
    """Run ``command`` on one scenario file; returns (exit code, text, message)."""
    func, default_fmt = COMMANDS[command]
    fmt = args.format or default_fmt
    try:
        sc = _apply_overrides(load(path), args)
        result = func(sc, args)
        return EXIT_OK, _render(command, result, fmt), None
    except CommandError as exc:
        text = _render(command, exc.payload, fmt) if exc.payload is not None else ""
        return exc.code, text, str(exc)
    except tuple(e for e, _ in _EXIT_FOR) as exc:
        code = next(c for e, c in _EXIT_FOR if isinstance(exc, e))
        return code, "", str(exc)


def build_parser():
    p = argparse.ArgumentParser(prog="admpc",
                                description="Exact SOCP solution of adversarial MPC problems.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("files", nargs="+",
                   help="scenario files, or built-in names (example1, double_integrator, "
                        "microgrid)")
    p.add_argument("--out", help="output file (one input) or directory (several inputs)")
    p.add_argument("--format", choices=["csv", "json", "text"])
    p.add_argument("--feas-tol", dest="feas_tol", type=float)
    p.add_argument("--gap-tol", dest="gap_tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--jobs", type=int, default=1, help="scenario files processed concurrently")
    p.add_argument("--x0", type=float, nargs="+", help="override the initial state")
    p.add_argument("--horizon", type=int, help="override the horizon N")
    p.add_argument("--steps", type=int, help="override the receding-horizon step count")
    return p


def _configure_logging():
    level = os.environ.get("ADMPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("admpc: --jobs must be at least 1", file=sys.stderr)
        return 2
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(lambda f: run_one(args.command, f, args), args.files))

    fmt = args.format or COMMANDS[args.command][1]
    ext = {"csv": "csv", "json": "json", "text": "txt"}[fmt]
    worst = EXIT_OK
    for path, (code, text, message) in zip(args.files, results):
        if message:
            print(f"admpc {args.command} {path}: {message}", file=sys.stderr)
        worst = worst or code
        if not text:
            continue
        if args.out is None:
            sys.stdout.write(text)
        elif len(args.files) == 1:
            Path(args.out).write_text(text)
        else:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"{Path(path).stem}.{args.command}.{ext}").write_text(text)
    return worst


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
