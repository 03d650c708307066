"""Horizon-level quadratic functions, condensation and homogenization.

A horizon quadratic is::

    F(X, U) = X'QX + 2 X'SU + U'RU + 2 q'X + 2 r'U + gamma

Substituting ``X = Sx x0 + Su U`` gives the condensed form::

    G(x0, U) = U'MU + 2 (x0'N + d')U + x0'T x0 + 2 v'x0 + gamma

and the homogeneous matrix ``P(x0)`` satisfies ``[1; U]' P(x0) [1; U] = G(x0, U)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, InvalidInputError
from .linsys import PredictionMatrices

OBJECTIVE = "objective"
CONSTRAINT = "constraint"

# structural zeros produced by condensation carry rounding dust of this size
ZERO_CLEANUP = 1e-12

Placement = Union[int, str]


def _sym(M):
    return 0.5 * (M + M.T)


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class HorizonQuadratic:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    q: np.ndarray
    r: np.ndarray
    gamma: float = 0.0
    kind: str = OBJECTIVE

    def __post_init__(self):
        Q = _sym(np.array(self.Q, dtype=float))
        R = _sym(np.array(self.R, dtype=float))
        S = np.array(self.S, dtype=float)
        q = np.array(self.q, dtype=float).ravel()
        r = np.array(self.r, dtype=float).ravel()
        nX, nU = Q.shape[0], R.shape[0]
        if Q.shape != (nX, nX) or R.shape != (nU, nU):
            raise DimensionError("Q and R must be square")
        if S.shape != (nX, nU) or q.shape != (nX,) or r.shape != (nU,):
            raise DimensionError(
                f"inconsistent shapes Q{Q.shape} R{R.shape} S{S.shape} q{q.shape} r{r.shape}"
            )
        if self.kind not in (OBJECTIVE, CONSTRAINT):
            raise InvalidInputError(f"unknown kind {self.kind!r}")
        for a in (Q, R, S, q, r):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("quadratic data contains non-finite entries")
        _readonly(Q, R, S, q, r)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def zeros(cls, N, nx, nu, kind=OBJECTIVE):
        nX, nU = (N + 1) * nx, N * nu
        return cls(np.zeros((nX, nX)), np.zeros((nU, nU)), np.zeros((nX, nU)),
                   np.zeros(nX), np.zeros(nU), 0.0, kind)

    def __add__(self, other):
        if not isinstance(other, HorizonQuadratic):
            return NotImplemented
        if self.Q.shape != other.Q.shape or self.R.shape != other.R.shape:
            raise DimensionError("cannot add quadratics over different horizons")
        return HorizonQuadratic(self.Q + other.Q, self.R + other.R, self.S + other.S,
                                self.q + other.q, self.r + other.r,
                                self.gamma + other.gamma, self.kind)

    def __neg__(self):
        return HorizonQuadratic(-self.Q, -self.R, -self.S, -self.q, -self.r,
                                -self.gamma, self.kind)


@dataclass(frozen=True)
class CondensedQuadratic:
    M: np.ndarray
    Nmat: np.ndarray
    d: np.ndarray
    T: np.ndarray
    v: np.ndarray
    gamma: float = 0.0
    kind: str = OBJECTIVE

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def nx(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True)
class HomogeneousFamily:
    """Matrices ``P[0]`` (objective) and ``P[1:]`` (constraints ``<= 0``)."""

    P: tuple
    n: int
    lambda_set: tuple

    @property
    def m(self) -> int:
        return len(self.P) - 1

    def values(self, U) -> np.ndarray:
        """``[1; U]' P_i [1; U]`` for every family member."""
        z = np.concatenate([[1.0], np.asarray(U, dtype=float).ravel()])
        return np.array([z @ P @ z for P in self.P])


@dataclass(frozen=True)
class StageSpec:
    """Per-step quadratic terms replicated according to ``placement``.

    ``placement`` is a step index ``k``, ``"all"`` (every step, summed) or
    ``"terminal"`` (step N, states only). Linear terms enter as
    ``2 linear_state' x(k) + 2 linear_control' u(k)``, matching the factor-two
    convention of the horizon form; ``cross`` enters as ``2 x(k)' cross u(k)``.
    """

    state_cost: Optional[np.ndarray] = None
    control_cost: Optional[np.ndarray] = None
    cross: Optional[np.ndarray] = None
    linear_state: Optional[np.ndarray] = None
    linear_control: Optional[np.ndarray] = None
    constant: float = 0.0
    placement: Placement = "all"
    kind: str = OBJECTIVE
    label: str = field(default="", compare=False)

    def has_control_terms(self) -> bool:
        return any(t is not None for t in (self.control_cost, self.cross, self.linear_control))


def _steps(placement, N, controls):
    """Step indices selected by a placement for the state or control sequence."""
    last = N - 1 if controls else N
    if placement == "all":
        return list(range(last + 1))
    if placement == "terminal":
        if controls:
            raise InvalidInputError("terminal placement cannot carry control terms (no u(N))")
        return [N]
    if isinstance(placement, (int, np.integer)) and not isinstance(placement, bool):
        k = int(placement)
        if not 0 <= k <= last:
            what = "control" if controls else "state"
            raise InvalidInputError(f"{what} placement {k} outside [0, {last}]")
        return [k]
    raise InvalidInputError(f"unknown placement {placement!r}")


def _block(a, shape, name):
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def assemble(stage: StageSpec, N: int, nx: int, nu: int) -> HorizonQuadratic:
    """Embed the stage blocks of ``stage`` into horizon-level matrices."""
    f = HorizonQuadratic.zeros(N, nx, nu, stage.kind)
    Q, R, S, q, r = (np.array(a) for a in (f.Q, f.R, f.S, f.q, f.r))

    if stage.state_cost is not None or stage.linear_state is not None:
        for k in _steps(stage.placement, N, controls=False):
            xs = slice(k * nx, (k + 1) * nx)
            if stage.state_cost is not None:
                Q[xs, xs] += _block(stage.state_cost, (nx, nx), "state_cost")
            if stage.linear_state is not None:
                q[xs] += _block(stage.linear_state, (nx,), "linear_state")
    if stage.has_control_terms():
        for k in _steps(stage.placement, N, controls=True):
            xs = slice(k * nx, (k + 1) * nx)
            us = slice(k * nu, (k + 1) * nu)
            if stage.control_cost is not None:
                R[us, us] += _block(stage.control_cost, (nu, nu), "control_cost")
            if stage.cross is not None:
                S[xs, us] += _block(stage.cross, (nx, nu), "cross")
            if stage.linear_control is not None:
                r[us] += _block(stage.linear_control, (nu,), "linear_control")
    return HorizonQuadratic(Q, R, S, q, r, stage.constant, stage.kind)


def assemble_sum(stages: Sequence[StageSpec], N, nx, nu, kind=None) -> HorizonQuadratic:
    """Sum of several stage blocks, e.g. a running cost plus a terminal cost."""
    if not stages:
        raise InvalidInputError("no stage blocks given")
    total = None
    for st in stages:
        f = assemble(st, N, nx, nu)
        total = f if total is None else total + f
    if kind is not None and kind != total.kind:
        total = HorizonQuadratic(total.Q, total.R, total.S, total.q, total.r, total.gamma, kind)
    return total


def _check_dims(f: HorizonQuadratic, pm: PredictionMatrices):
    if f.Q.shape[0] != pm.Sx.shape[0] or f.R.shape[0] != pm.Su.shape[1]:
        raise DimensionError(
            f"quadratic over ({f.Q.shape[0]}, {f.R.shape[0]}) does not match prediction "
            f"matrices Su{pm.Su.shape}"
        )


def condense(f: HorizonQuadratic, pm: PredictionMatrices) -> CondensedQuadratic:
    _check_dims(f, pm)
    Sx, Su = pm.Sx, pm.Su
    QSu = f.Q @ Su
    M = _sym(Su.T @ QSu + Su.T @ f.S + f.S.T @ Su + f.R)
    Nmat = Sx.T @ QSu + Sx.T @ f.S
    d = Su.T @ f.q + f.r
    T = _sym(Sx.T @ f.Q @ Sx)
    v = Sx.T @ f.q
    _readonly(M, Nmat, d, T, v)
    return CondensedQuadratic(M, Nmat, d, T, v, f.gamma, f.kind)


def evaluate_horizon(f: HorizonQuadratic, X, U) -> float:
    X = np.asarray(X, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if X.shape != f.q.shape or U.shape != f.r.shape:
        raise DimensionError(f"expected X of length {f.q.size} and U of length {f.r.size}")
    return float(X @ f.Q @ X + 2 * X @ f.S @ U + U @ f.R @ U
                 + 2 * f.q @ X + 2 * f.r @ U + f.gamma)


def evaluate_condensed(g: CondensedQuadratic, x0, U) -> float:
    x0 = np.asarray(x0, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if x0.shape != (g.nx,) or U.shape != (g.n,):
        raise DimensionError(f"expected x0 of length {g.nx} and U of length {g.n}")
    return float(U @ g.M @ U + 2 * (x0 @ g.Nmat + g.d) @ U
                 + x0 @ g.T @ x0 + 2 * g.v @ x0 + g.gamma)


def homogeneous_matrix(g: CondensedQuadratic, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (g.nx,):
        raise DimensionError(f"x0 has length {x0.size}, expected {g.nx}")
    n = g.n
    P = np.empty((n + 1, n + 1))
    P[0, 0] = x0 @ g.T @ x0 + 2 * g.v @ x0 + g.gamma
    tail = x0 @ g.Nmat + g.d
    P[0, 1:] = tail
    P[1:, 0] = tail
    P[1:, 1:] = g.M
    return P


def support_pairs(mats, tol=0.0):
    """Strict upper-triangular pairs (j, k) where some matrix is nonzero."""
    stack = np.abs(np.asarray(mats))
    nz = np.triu((stack > tol).any(axis=0), k=1)
    return tuple((int(j), int(k)) for j, k in zip(*np.nonzero(nz)))


def homogenize(gs: Sequence[CondensedQuadratic], x0) -> HomogeneousFamily:
    if not gs:
        raise InvalidInputError("empty family")
    n = gs[0].n
    if any(g.n != n for g in gs):
        raise DimensionError("all condensed functions must share the decision dimension")
    Ps = []
    for g in gs:
        P = homogeneous_matrix(g, x0)
        P[np.abs(P) <= ZERO_CLEANUP] = 0.0
        _readonly(P)
        Ps.append(P)
    return HomogeneousFamily(tuple(Ps), n, support_pairs(Ps))
