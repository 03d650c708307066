"""Scenario definitions and the TOML scenario-file format.

A scenario file looks like::

    name = "example1"
    horizon = 2
    x0 = [0.0, 0.1]
    steps = 10

    [system.discrete]            # or [system.continuous] with A_c, B_c, dt
    A = [[0.9, -0.2], [0.0, 0.9]]
    B = [[0.2, -0.05], [0.0, 0.2]]

    [[objective]]                # several tables are summed
    state_cost = [[0.0, 1.0], [1.0, 0.0]]
    placement = "all"

    [[constraints]]
    control_cost = [[1.0, 0.0], [0.0, 1.0]]
    placement = "each"           # one constraint per step
    bound = [0.2, 0.5]           # two-sided: expands to two constraints

Stage fields are ``state_cost``, ``control_cost``, ``cross``,
``linear_state``, ``linear_control``, ``constant`` and ``placement`` (a step
index, ``"all"``, ``"terminal"`` or, for constraints, ``"each"``). A
constraint reads ``f <= bound`` (``sense = "<="``, the default),
``f >= bound`` or, with a two-sided ``bound = [lo, hi]``, ``lo <= f <= hi``.
``horizon_scaled = true`` multiplies the bound by the horizon. Objective
tables may set ``sense = "maximize"``, which negates the whole objective.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import InvalidInputError, ScenarioError
from .linsys import (ContinuousLinearSystem, DiscreteLinearSystem, is_positive,
                     prediction_matrices, zoh_discretize)
from .quadform import (CONSTRAINT, OBJECTIVE, HorizonQuadratic, StageSpec, assemble,
                       assemble_sum, condense)

TWO_SIDED = "two-sided"
BUILTIN = ("example1", "double_integrator", "microgrid")

_STAGE_FIELDS = ("state_cost", "control_cost", "cross", "linear_state", "linear_control")

_matrix = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_placement = {"oneOf": [{"type": "integer", "minimum": 0},
                        {"enum": ["all", "terminal", "each"]}]}
_stage_props = {
    "label": {"type": "string"},
    "state_cost": _matrix,
    "control_cost": _matrix,
    "cross": _matrix,
    "linear_state": _vector,
    "linear_control": _vector,
    "constant": {"type": "number"},
    "placement": _placement,
}

SCHEMA = {
    "type": "object",
    "required": ["system", "horizon", "objective", "x0"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "horizon": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 0},
        "x0": _vector,
        "system": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "discrete": {"type": "object", "required": ["A", "B"],
                             "additionalProperties": False,
                             "properties": {"A": _matrix, "B": _matrix,
                                            "dt": {"type": "number", "exclusiveMinimum": 0}}},
                "continuous": {"type": "object", "required": ["A_c", "B_c", "dt"],
                               "additionalProperties": False,
                               "properties": {"A_c": _matrix, "B_c": _matrix,
                                              "dt": {"type": "number",
                                                     "exclusiveMinimum": 0}}},
            },
        },
        "objective": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "additionalProperties": False,
                      "properties": {**_stage_props,
                                     "sense": {"enum": ["minimize", "maximize"]}}},
        },
        "constraints": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False,
                      "properties": {
                          **_stage_props,
                          "sense": {"enum": ["<=", ">="]},
                          "bound": {"oneOf": [{"type": "number"},
                                              {"type": "array", "minItems": 2, "maxItems": 2,
                                               "items": {"type": "number"}}]},
                          "horizon_scaled": {"type": "boolean"},
                      }},
        },
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"feas_tol": {"type": "number", "exclusiveMinimum": 0},
                                  "gap_tol": {"type": "number", "exclusiveMinimum": 0},
                                  "max_iter": {"type": "integer", "minimum": 1},
                                  "verbose": {"type": "boolean"}}},
        "oracle": {"type": "object", "additionalProperties": False,
                   "properties": {"box": {"oneOf": [
                                      {"type": "array", "minItems": 2, "maxItems": 2,
                                       "items": {"type": "number"}},
                                      {"type": "array", "minItems": 1,
                                       "items": {"type": "array", "minItems": 2,
                                                 "maxItems": 2,
                                                 "items": {"type": "number"}}}]},
                                  "schedule": {"type": "array", "minItems": 1,
                                               "items": {"type": "integer", "minimum": 2}}}},
    },
}


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    verbose: bool = False


@dataclass(frozen=True)
class OracleOptions:
    box: Optional[tuple] = None
    schedule: Optional[tuple] = None


@dataclass(frozen=True)
class ConstraintSpec:
    """One constraint table: ``stage`` compared against ``bound``.

    ``sense`` is ``"<="``, ``">="`` or ``"two-sided"`` (``bound = (lo, hi)``).
    A ``stage`` with placement ``"each"`` is replicated over the steps.
    """

    stage: StageSpec
    sense: str = "<="
    bound: Union[float, tuple] = 0.0
    horizon_scaled: bool = False

    def expand(self, N, nx, nu) -> list:
        """Horizon quadratics in ``f <= 0`` form, in (step, lower, upper) order."""
        st = self.stage
        if st.placement == "each":
            last = N - 1 if st.has_control_terms() else N
            stages = [dataclasses.replace(st, placement=k) for k in range(last + 1)]
        else:
            stages = [st]
        scale = N if self.horizon_scaled else 1.0
        out = []
        for s in stages:
            f = assemble(dataclasses.replace(s, kind=CONSTRAINT), N, nx, nu)
            if self.sense == TWO_SIDED:
                lo, hi = self.bound
                out.append(_shift(-f, lo * scale))
                out.append(_shift(f, -hi * scale))
            elif self.sense == ">=":
                out.append(_shift(-f, self.bound * scale))
            else:
                out.append(_shift(f, -self.bound * scale))
        return out


def _shift(f: HorizonQuadratic, delta) -> HorizonQuadratic:
    return HorizonQuadratic(f.Q, f.R, f.S, f.q, f.r, f.gamma + delta, f.kind)


@dataclass(frozen=True)
class Compiled:
    """x0-independent data derived from a scenario."""

    system: DiscreteLinearSystem
    prediction: object
    functions: tuple
    condensed: tuple
    labels: tuple


@dataclass(frozen=True)
class Scenario:
    system: Union[ContinuousLinearSystem, DiscreteLinearSystem]
    horizon: int
    objective: tuple
    constraints: tuple
    x0: np.ndarray
    steps: int = 0
    maximize: bool = False
    dt: Optional[float] = None
    name: str = ""
    solver: SolverOptions = field(default_factory=SolverOptions)
    oracle: OracleOptions = field(default_factory=OracleOptions)
    # derived x0-independent results; never copied by replace()
    cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.objective:
            raise InvalidInputError("a scenario needs at least one objective block")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidInputError(f"horizon must be a positive integer, got {self.horizon}")
        if isinstance(self.system, ContinuousLinearSystem) and not self.dt:
            raise InvalidInputError("a continuous system needs a sample time dt")
        x0 = np.array(self.x0, dtype=float).ravel()
        if x0.size != self.system.nx:
            raise InvalidInputError(f"x0 has length {x0.size}, expected {self.system.nx}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "objective", tuple(self.objective))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    @property
    def discrete(self) -> DiscreteLinearSystem:
        return self.compiled.system

    @cached_property
    def compiled(self) -> Compiled:
        ds = self.system
        if isinstance(ds, ContinuousLinearSystem):
            ds = zoh_discretize(ds, self.dt)
        N, nx, nu = self.horizon, ds.nx, ds.nu
        pm = prediction_matrices(ds, N)
        obj = assemble_sum(self.objective, N, nx, nu, kind=OBJECTIVE)
        if self.maximize:
            obj = -obj
        funcs, labels = [obj], ["objective"]
        for i, c in enumerate(self.constraints):
            expanded = c.expand(N, nx, nu)
            funcs.extend(expanded)
            base = c.stage.label or f"constraint{i}"
            labels.extend(f"{base}[{j}]" for j in range(len(expanded)))
        condensed = tuple(condense(f, pm) for f in funcs)
        return Compiled(ds, pm, tuple(funcs), condensed, tuple(labels))


# ---------------------------------------------------------------- file I/O

def _stage_from(table, kind) -> StageSpec:
    kw = {k: np.array(table[k], dtype=float) for k in _STAGE_FIELDS if k in table}
    return StageSpec(**kw, constant=float(table.get("constant", 0.0)),
                     placement=table.get("placement", "all"), kind=kind,
                     label=table.get("label", ""))


def _validate(data, source):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{source}: field {where}: {e.message}")
        raise ScenarioError("\n".join(lines))


def scenario_from_dict(data, source="<scenario>") -> Scenario:
    _validate(data, source)
    sys_tab = data["system"]
    try:
        if "discrete" in sys_tab:
            d = sys_tab["discrete"]
            system = DiscreteLinearSystem(d["A"], d["B"], dt=d.get("dt"))
            dt = d.get("dt")
        else:
            c = sys_tab["continuous"]
            system = ContinuousLinearSystem(c["A_c"], c["B_c"])
            dt = float(c["dt"])

        senses = {t.get("sense", "minimize") for t in data["objective"]}
        if len(senses) > 1:
            raise ScenarioError(f"{source}: field objective: mixed minimize/maximize senses")
        objective = tuple(_stage_from(t, OBJECTIVE) for t in data["objective"])
        if any(s.placement == "each" for s in objective):
            raise ScenarioError(f"{source}: field objective: placement 'each' is only "
                                "meaningful for constraints")

        constraints = []
        for t in data.get("constraints", []):
            bound = t.get("bound", 0.0)
            if isinstance(bound, list):
                if "sense" in t:
                    raise ScenarioError(f"{source}: field constraints: a two-sided bound "
                                        "cannot carry a sense")
                sense, bound = TWO_SIDED, (float(bound[0]), float(bound[1]))
                if bound[0] > bound[1]:
                    raise ScenarioError(f"{source}: field constraints: empty bound {bound}")
            else:
                sense, bound = t.get("sense", "<="), float(bound)
            constraints.append(ConstraintSpec(_stage_from(t, CONSTRAINT), sense, bound,
                                              bool(t.get("horizon_scaled", False))))

        solver = SolverOptions(**data.get("solver", {}))
        otab = data.get("oracle", {})
        box = otab.get("box")
        if box is not None:
            box = tuple(tuple(float(v) for v in row) for row in
                        (box if isinstance(box[0], list) else [box]))
        schedule = tuple(otab["schedule"]) if "schedule" in otab else None
        sc = Scenario(system, int(data["horizon"]), objective, tuple(constraints),
                      np.array(data["x0"], dtype=float), int(data.get("steps", 0)),
                      senses == {"maximize"}, dt, data.get("name", ""), solver,
                      OracleOptions(box, schedule))
        # surface dimension errors at load time rather than at the first solve
        sc.compiled
    except InvalidInputError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    return sc


def loads(text: str, source="<string>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    return scenario_from_dict(data, source)


def builtin_path(name: str):
    stem = name[:-5] if name.endswith(".toml") else name
    if stem not in BUILTIN:
        raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {BUILTIN}")
    return resources.files("admpc") / "scenarios" / f"{stem}.toml"


def load(path) -> Scenario:
    """Load a scenario file; bare built-in names resolve to the bundled files."""
    p = Path(path)
    if p.is_file():
        return loads(p.read_text(), str(p))
    if p.name == str(path) and (str(path) in BUILTIN or str(path)[:-5] in BUILTIN):
        res = builtin_path(str(path))
        return loads(res.read_text(), str(path))
    raise ScenarioError(f"scenario file {path} not found")


def _tolist(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _stage_table(st: StageSpec):
    out = {}
    if st.label:
        out["label"] = st.label
    for k in _STAGE_FIELDS:
        v = getattr(st, k)
        if v is not None:
            out[k] = _tolist(v)
    if st.constant:
        out["constant"] = float(st.constant)
    out["placement"] = st.placement if isinstance(st.placement, str) else int(st.placement)
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    data = {}
    if sc.name:
        data["name"] = sc.name
    data["horizon"] = int(sc.horizon)
    data["steps"] = int(sc.steps)
    data["x0"] = _tolist(sc.x0)
    if isinstance(sc.system, ContinuousLinearSystem):
        data["system"] = {"continuous": {"A_c": _tolist(sc.system.A_c),
                                         "B_c": _tolist(sc.system.B_c), "dt": float(sc.dt)}}
    else:
        disc = {"A": _tolist(sc.system.A), "B": _tolist(sc.system.B)}
        if sc.dt is not None:
            disc["dt"] = float(sc.dt)
        data["system"] = {"discrete": disc}
    data["objective"] = []
    for st in sc.objective:
        t = _stage_table(st)
        t["sense"] = "maximize" if sc.maximize else "minimize"
        data["objective"].append(t)
    data["constraints"] = []
    for c in sc.constraints:
        t = _stage_table(c.stage)
        if c.sense == TWO_SIDED:
            t["bound"] = [float(c.bound[0]), float(c.bound[1])]
        else:
            t["sense"] = c.sense
            t["bound"] = float(c.bound)
        if c.horizon_scaled:
            t["horizon_scaled"] = True
        data["constraints"].append(t)
    data["solver"] = dataclasses.asdict(sc.solver)
    otab = {}
    if sc.oracle.box is not None:
        otab["box"] = [list(row) for row in sc.oracle.box]
    if sc.oracle.schedule is not None:
        otab["schedule"] = list(sc.oracle.schedule)
    if otab:
        data["oracle"] = otab
    return data


def dumps(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def discrete_report(sc: Scenario) -> dict:
    ds = sc.discrete
    return {"A": _tolist(ds.A), "B": _tolist(ds.B), "dt": sc.dt, "positive": is_positive(ds)}
