"""Brute-force global search for small homogeneous QCQPs.

Used only to cross-check the relaxation. The search is a multi-resolution
grid: a coarse grid over a box, then local grids around the best cells at
ten times finer spacing, then a coordinate-descent polish and a final
local SQP polish. It returns the best point found; it does not certify a
lower bound.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import OracleError
from .quadform import HomogeneousFamily

MAX_DIM = 6
KEEP = 32
FEAS_TOL = 1e-6
BOX_INFLATION = 1.1
DEFAULT_SCHEDULE = (21, 11, 11)
REFINE_FACTOR = 10
POLISH_ITERS = 200
POLISH_STEP = 1e-3
CHUNK = 200_000


@dataclass(frozen=True)
class OracleResult:
    U: np.ndarray
    objective: float
    feasible_count: int
    schedule: tuple
    resolutions: tuple
    history: tuple
    box: tuple
    keep: int = KEEP
    certified_bound: bool = False
    stages: tuple = field(default=())

    def as_dict(self):
        return {
            "U": [float(v) for v in self.U],
            "objective": float(self.objective),
            "feasible_count": int(self.feasible_count),
            "schedule": list(self.schedule),
            "resolutions": [float(r) for r in self.resolutions],
            "history": [float(h) for h in self.history],
            "stages": list(self.stages),
            "box": [[float(lo), float(hi)] for lo, hi in self.box],
            "keep": self.keep,
            "certified_bound": self.certified_bound,
        }


class _Evaluator:
    """Vectorised objective and worst constraint value over batches of U."""

    def __init__(self, fam: HomogeneousFamily):
        P = np.asarray(fam.P, dtype=float)
        self.const = P[:, 0, 0]
        self.lin = 2.0 * P[:, 0, 1:]
        self.quad = P[:, 1:, 1:]

    def values(self, pts):
        pts = np.atleast_2d(pts)
        out = np.empty((pts.shape[0], self.const.size))
        for i, (c, l, Q) in enumerate(zip(self.const, self.lin, self.quad)):
            out[:, i] = c + pts @ l + np.einsum("bi,bi->b", pts @ Q, pts)
        return out

    def score(self, pts):
        v = self.values(pts)
        worst = v[:, 1:].max(axis=1) if v.shape[1] > 1 else np.full(v.shape[0], -np.inf)
        return v[:, 0], worst

    def gradient(self, U):
        return self.lin + 2.0 * self.quad @ U


def _grid(centers, half, points):
    """Outer-product grids of ``points`` per axis around each centre."""
    offs = np.linspace(-1.0, 1.0, points)
    n = centers.shape[1]
    local = np.array(list(itertools.product(offs, repeat=n))) * half
    return centers[:, None, :] + local[None, :, :]


def _lazy_grid(center, half, points):
    """The coarse grid in chunks, so that 21^6 points never sit in memory."""
    n = center.size
    offs = np.linspace(-1.0, 1.0, points)
    total = points ** n
    for start in range(0, total, CHUNK):
        idx = np.unravel_index(np.arange(start, min(start + CHUNK, total)), (points,) * n)
        yield center + np.column_stack([offs[i] for i in idx]) * half


def _best(ev, batches, keep):
    """Top ``keep`` feasible points, ordered by (objective, lexicographic U)."""
    objs, pts, count = [], [], 0
    for batch in batches:
        for start in range(0, batch.shape[0], CHUNK):
            chunk = batch[start:start + CHUNK]
            obj, worst = ev.score(chunk)
            ok = worst <= FEAS_TOL
            count += int(ok.sum())
            if ok.any():
                o, p = obj[ok], chunk[ok]
                if o.size > keep:
                    idx = np.argpartition(o, keep - 1)[:keep]
                    o, p = o[idx], p[idx]
                objs.append(o)
                pts.append(p)
    if not objs:
        return np.empty(0), np.empty((0, 0)), count
    o = np.concatenate(objs)
    p = np.vstack(pts)
    order = np.lexsort(tuple(p[:, j] for j in reversed(range(p.shape[1]))) + (o,))[:keep]
    return o[order], p[order], count


def _coordinate_descent(ev, U, obj, iters=POLISH_ITERS, step=POLISH_STEP):
    """Axis moves of shrinking size, rejecting infeasible trial points."""
    n = U.size
    for _ in range(iters):
        improved = False
        trials = np.repeat(U[None, :], 2 * n, axis=0)
        trials[np.arange(n), np.arange(n)] += step
        trials[n + np.arange(n), np.arange(n)] -= step
        o, w = ev.score(trials)
        o = np.where(w <= FEAS_TOL, o, np.inf)
        j = int(np.argmin(o))
        if o[j] < obj:
            U, obj, improved = trials[j], float(o[j]), True
        if not improved:
            step *= 0.5
            if step < 1e-12:
                break
    return U, obj


def _sqp_polish(ev, U, obj):
    """Local SLSQP from the best point; kept only if feasible and better."""
    cons = {"type": "ineq",
            "fun": lambda u: -ev.values(u)[0, 1:],
            "jac": lambda u: -ev.gradient(u)[1:]}
    try:
        res = minimize(lambda u: ev.values(u)[0, 0], U, jac=lambda u: ev.gradient(u)[0],
                       constraints=[cons] if ev.const.size > 1 else [], method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 500})
    except (ValueError, np.linalg.LinAlgError):
        return U, obj
    o, w = ev.score(res.x)
    if np.isfinite(o[0]) and w[0] <= FEAS_TOL and o[0] < obj:
        return np.asarray(res.x), float(o[0])
    return U, obj


def brute_force(fam: HomogeneousFamily, box=None, schedule: Sequence[int] = DEFAULT_SCHEDULE,
                keep: int = KEEP, polish: bool = True) -> OracleResult:
    """Best feasible point of the QCQP found by grid refinement.

    ``schedule[0]`` is the number of points per axis on the coarse grid over
    ``box``; each later entry is the points per axis of the local grid placed
    on each retained cell, with spacing ``REFINE_FACTOR`` times finer than
    the previous round.
    """
    n = fam.n
    if n > MAX_DIM:
        raise OracleError(f"brute force is limited to n <= {MAX_DIM}, got n = {n}")
    if box is None:
        box = derive_box(fam)
    box = np.asarray(box, dtype=float).reshape(n, 2)
    if np.any(~np.isfinite(box)) or np.any(box[:, 1] < box[:, 0]):
        raise OracleError("box must have finite bounds with lo <= hi")
    schedule = tuple(int(s) for s in schedule)
    if not schedule or any(s < 2 for s in schedule):
        raise OracleError(f"invalid schedule {schedule}")

    ev = _Evaluator(fam)
    center = box.mean(axis=1)
    half = 0.5 * (box[:, 1] - box[:, 0])
    spacing = 2.0 * half / (schedule[0] - 1)
    coarse = _lazy_grid(center, half, schedule[0])
    objs, pts, count = _best(ev, coarse, keep)
    if not objs.size:
        raise OracleError(
            f"no feasible grid point at {schedule[0]} points per axis (spacing "
            f"{spacing.max():.3g}); the problem is infeasible or the grid too coarse")
    resolutions = [float(spacing.max())]
    history = [float(objs[0])]

    for points in schedule[1:]:
        # local grid covers the retained cell (+-spacing/2) at spacing/REFINE_FACTOR
        spacing = spacing / REFINE_FACTOR
        cell_half = spacing * (points - 1) / 2.0
        grids = _grid(pts, cell_half, points)
        o_new, p_new, c_new = _best(ev, [np.vstack([grids.reshape(-1, n), pts])], keep)
        count += c_new
        objs, pts = o_new, p_new
        resolutions.append(float(spacing.max()))
        history.append(float(objs[0]))

    U, obj = pts[0].copy(), float(objs[0])
    stages = ["grid"] * len(schedule)
    if polish:
        U, obj = _coordinate_descent(ev, U, obj)
        history.append(obj)
        stages.append("coordinate-descent")
        U, obj = _sqp_polish(ev, U, obj)
        history.append(obj)
        stages.append("sqp")

    _, worst = ev.score(U)
    assert worst[0] <= FEAS_TOL, "oracle returned an infeasible point"
    return OracleResult(U, obj, count, schedule, tuple(resolutions), tuple(history),
                        tuple(map(tuple, box)), keep, False, tuple(stages))


def derive_box(fam: HomogeneousFamily, inflation: float = BOX_INFLATION) -> np.ndarray:
    """Per-coordinate bounds implied by diagonal constraint rows.

    A constraint whose quadratic block is diagonal and nonnegative, with
    linear terms only on its support, describes an axis-aligned ellipsoid
    after completing the square. Each such constraint bounds the coordinates
    in its support; the tightest bound per coordinate is inflated about its
    centre by ``inflation``.
    """
    n = fam.n
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for P in fam.P[1:]:
        P = np.asarray(P, dtype=float)
        Q = P[1:, 1:]
        D = np.diag(Q)
        p = P[0, 1:]
        if np.any(Q - np.diag(D)) or np.any(D < 0):
            continue
        supp = D > 0
        if not supp.any() or np.any(p[~supp]):
            continue
        shift = -p[supp] / D[supp]
        rho = float(np.sum(p[supp] ** 2 / D[supp]) - P[0, 0])
        if rho < 0:
            raise OracleError("a diagonal constraint has an empty feasible set")
        rad = np.sqrt(rho / D[supp])
        lo[supp] = np.maximum(lo[supp], shift - rad)
        hi[supp] = np.minimum(hi[supp], shift + rad)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        free = [int(k) for k in np.nonzero(~(np.isfinite(lo) & np.isfinite(hi)))[0]]
        raise OracleError(f"no norm constraint bounds coordinates {free}; supply a box")
    if np.any(lo > hi):
        raise OracleError("diagonal constraints imply an empty box")
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * inflation
    return np.column_stack([mid - half, mid + half])
