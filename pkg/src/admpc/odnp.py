"""Almost off-diagonal non-positivity (ODNP): detection, sign vectors, regions.

A symmetric matrix ``A`` is ODNP with respect to ``sigma`` in {-1, +1}^n when
``A[j, k] * sigma[j] * sigma[k] <= 0`` for every strict off-diagonal pair.
Finding one sign vector for a whole family is a parity problem on a signed
graph: a positive entry asks for opposite signs, a negative one for equal
signs.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import DimensionError, NotODNPError
from .linsys import DiscreteLinearSystem, is_positive
from .quadform import CondensedQuadratic, HomogeneousFamily, HorizonQuadratic

SIGN_TOL = 1e-12
REGION_TOL = 1e-9


@dataclass(frozen=True)
class SignVector:
    entries: tuple
    canonical: bool = False

    def __post_init__(self):
        ent = tuple(int(e) for e in np.asarray(self.entries).ravel())
        if any(e not in (-1, 1) for e in ent):
            raise ValueError(f"sign vector entries must be +-1, got {ent}")
        object.__setattr__(self, "entries", ent)

    def __len__(self):
        return len(self.entries)

    def __neg__(self):
        return SignVector(tuple(-e for e in self.entries))

    def __array__(self, dtype=None, copy=None):
        return np.array(self.entries, dtype=dtype if dtype is not None else float)

    def plus(self) -> "SignVector":
        """Lifted vector (1, sigma) for the homogeneous family."""
        return SignVector((1,) + self.entries)

    def minus(self) -> "SignVector":
        """Lifted vector (1, -sigma)."""
        return SignVector((1,) + tuple(-e for e in self.entries))

    def equivalent(self, other) -> bool:
        """Equal up to a global flip."""
        o = tuple(other)
        return self.entries == o or self.entries == tuple(-e for e in o)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class SignConflict:
    """Why no uniform sign vector exists.

    ``pair`` is the contradicted entry (j, k). ``members`` lists the family
    indices involved: two indices for a direct sign clash on ``pair``, one
    index when the demand on ``pair`` contradicts the parity forced along
    ``cycle`` (an odd cycle in the signed graph).
    """

    pair: tuple
    members: tuple
    cycle: tuple = ()

    def describe(self) -> str:
        j, k = self.pair
        if len(self.members) == 2:
            a, b = self.members
            return (f"entry ({j},{k}) is positive in member {a} and negative in member {b}")
        path = "-".join(str(c) for c in self.cycle)
        return (f"sign demand of member {self.members[0]} on ({j},{k}) contradicts the "
                f"parity forced along cycle {path}")


class Region(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"
    BOTH = "both"
    NEITHER = "neither"


@dataclass(frozen=True)
class Halfspace:
    """``a @ x + b <= 0`` (sense "<=") or ``a @ x + b >= 0`` (sense ">=")."""

    a: np.ndarray
    b: float
    sense: str = "<="
    source: tuple = ()

    def value(self, x) -> float:
        return float(np.dot(self.a, x) + self.b)

    def satisfied(self, x, tol=REGION_TOL) -> bool:
        val = self.value(x)
        return val <= tol if self.sense == "<=" else val >= -tol

    def as_dict(self):
        return {"a": [float(v) for v in self.a], "b": float(self.b), "sense": self.sense,
                "source": list(self.source)}


@dataclass(frozen=True)
class RegionHalfspaces:
    plus_region: tuple
    minus_region: tuple
    pruned: bool = True

    def as_rows(self):
        rows = []
        for name, hs in (("plus", self.plus_region), ("minus", self.minus_region)):
            for h in hs:
                rows.append({"region": name, **h.as_dict()})
        return rows


@dataclass(frozen=True)
class StructureReport:
    """Outcome of the positive-system sufficient conditions."""

    applies: bool
    violation: Optional[str] = None

    def __bool__(self):
        return self.applies


def _as_stack(family):
    mats = np.asarray(family, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DimensionError(f"expected a family of square matrices, got shape {mats.shape}")
    return mats


def is_odnp(A, sigma, tol=SIGN_TOL) -> bool:
    A = np.asarray(A, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if A.shape != (s.size, s.size):
        raise DimensionError(f"matrix {A.shape} and sign vector of length {s.size}")
    signed = A * np.outer(s, s)
    signed[np.abs(A) <= tol] = 0.0
    return bool(np.all(np.triu(signed, k=1) <= 0.0))


def is_diagonal(P, tol=SIGN_TOL) -> bool:
    P = np.asarray(P, dtype=float)
    off = P - np.diag(np.diag(P))
    return bool(np.all(np.abs(off) <= tol))


def find_uniform_sign_vector(family, tol=SIGN_TOL) -> SignVector:
    """Sign vector making every member ODNP; raises :class:`NotODNPError`.

    Nodes are visited in index order and the first node of each connected
    component of the support graph gets +1, so the result is canonical.
    """
    mats = _as_stack(family)
    n = mats.shape[1]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    pos = (mats > tol) & upper
    neg = (mats < -tol) & upper
    pos_any, neg_any = pos.any(axis=0), neg.any(axis=0)

    clash = pos_any & neg_any
    if clash.any():
        j, k = (int(i) for i in np.argwhere(clash)[0])
        a = int(np.argmax(pos[:, j, k]))
        b = int(np.argmax(neg[:, j, k]))
        conflict = SignConflict((j, k), (a, b))
        raise NotODNPError(conflict.describe(), conflict)

    # parity 1 means sigma_j * sigma_k = -1
    adj = [[] for _ in range(n)]
    for j, k in np.argwhere(pos_any | neg_any):
        par = 1 if pos_any[j, k] else 0
        adj[j].append((int(k), par))
        adj[k].append((int(j), par))

    parity = [-1] * n
    parent = [-1] * n
    for root in range(n):
        if parity[root] >= 0:
            continue
        parity[root] = 0
        queue = deque([root])
        while queue:
            j = queue.popleft()
            for k, par in adj[j]:
                want = parity[j] ^ par
                if parity[k] < 0:
                    parity[k] = want
                    parent[k] = j
                    queue.append(k)
                elif parity[k] != want:
                    a, b = min(j, k), max(j, k)
                    src = pos[:, a, b] if pos_any[a, b] else neg[:, a, b]
                    conflict = SignConflict((a, b), (int(np.argmax(src)),),
                                            _cycle(parent, j, k))
                    raise NotODNPError(conflict.describe(), conflict)

    sigma = SignVector(tuple(1 - 2 * p for p in parity), canonical=True)
    for i, A in enumerate(mats):
        # soundness is cheap to re-check and guards the parity bookkeeping
        if not is_odnp(A, sigma, tol):
            raise AssertionError(f"sign search returned a vector violating member {i}")
    return sigma


def _cycle(parent, j, k):
    def chain(v):
        out = [v]
        while parent[v] >= 0:
            v = parent[v]
            out.append(v)
        return out

    cj, ck = chain(j), chain(k)
    common = set(cj) & set(ck)
    head = [v for v in cj if v not in common]
    tail = [v for v in ck if v not in common]
    meet = next(v for v in cj if v in common)
    return tuple(head + [meet] + tail[::-1])


def check_family_odnp(family, sigma_bar, tol=SIGN_TOL) -> bool:
    mats = family.P if isinstance(family, HomogeneousFamily) else family
    return all(is_odnp(P, sigma_bar, tol) for P in mats)


def diag_negation_check(P, sigma_bar, tol=SIGN_TOL) -> bool:
    """Whether -P is also ODNP w.r.t. ``sigma_bar``; holds iff P is diagonal."""
    if not is_odnp(P, sigma_bar, tol):
        raise ValueError("precondition violated: P is not ODNP with respect to sigma_bar")
    return is_odnp(-np.asarray(P, dtype=float), sigma_bar, tol)


def _prune(rows, offsets):
    """Drop zero rows, positive multiples and rows implied by the others.

    A row ``(a, b)`` is implied when it lies in the conic hull of the
    remaining rows together with ``(0, -1)``; checked by non-negative least
    squares. For offset-carrying rows the test runs on both the ``<=`` and the
    ``>=`` system so that the two regions stay exact negations of each other.
    """
    keep = []
    for i in range(len(rows)):
        a, b = rows[i], offsets[i]
        if np.abs(a).max(initial=0.0) <= SIGN_TOL and abs(b) <= SIGN_TOL:
            continue
        w = np.append(a, b)
        if not any(_positive_multiple(np.append(rows[j], offsets[j]), w) for j in keep):
            keep.append(i)

    full = np.column_stack([np.array(rows), np.array(offsets)]) if rows else np.zeros((0, 1))
    homogeneous = bool(np.all(np.abs(full[keep, -1]) <= SIGN_TOL)) if keep else True
    changed = True
    while changed and len(keep) > 1:
        changed = False
        for i in reversed(keep):
            others = [j for j in keep if j != i]
            if _implied(full[i], full[others]) and (
                    homogeneous or _implied(-full[i], -full[others])):
                keep.remove(i)
                changed = True
                break
    return keep


def _positive_multiple(u, w, tol=1e-10):
    nu_, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu_ == 0 or nw == 0:
        return False
    return bool(np.linalg.norm(u / nu_ - w / nw) <= tol)


def _implied(row, others, tol=1e-9):
    if len(others) == 0:
        return False
    gens = np.vstack([others, np.append(np.zeros(row.size - 1), -1.0)])
    scale = np.linalg.norm(row)
    _, resid = nnls(gens.T, row / scale)
    return resid <= tol


def admissible_regions(gs: Sequence[CondensedQuadratic], sigma, prune=True) -> RegionHalfspaces:
    """Initial-state halfspaces on which the lifted family stays ODNP.

    Row ``(i, k)`` is ``sigma_k * (N_i[:, k] @ x + d_i[k]) <= 0`` for the
    plus region; the minus region flips the inequality.
    """
    s = np.asarray(sigma, dtype=float)
    rows, offsets, sources = [], [], []
    for i, g in enumerate(gs):
        if g.n != s.size:
            raise DimensionError(f"sign vector of length {s.size} for n={g.n}")
        for k in range(g.n):
            rows.append(s[k] * g.Nmat[:, k])
            offsets.append(float(s[k] * g.d[k]) + 0.0)
            sources.append((i, k))
    idx = _prune(rows, offsets) if prune else [
        i for i in range(len(rows))
        if np.abs(rows[i]).max(initial=0.0) > SIGN_TOL or abs(offsets[i]) > SIGN_TOL]
    plus = tuple(Halfspace(np.array(rows[i]), offsets[i], "<=", sources[i]) for i in idx)
    minus = tuple(Halfspace(np.array(rows[i]), offsets[i], ">=", sources[i]) for i in idx)
    return RegionHalfspaces(plus, minus, prune)


def classify_state(x0, regions: RegionHalfspaces, tol=REGION_TOL) -> Region:
    x0 = np.asarray(x0, dtype=float).ravel()
    in_plus = all(h.satisfied(x0, tol) for h in regions.plus_region)
    in_minus = all(h.satisfied(x0, tol) for h in regions.minus_region)
    if in_plus and in_minus:
        return Region.BOTH
    if in_plus:
        return Region.PLUS
    if in_minus:
        return Region.MINUS
    return Region.NEITHER


def violated_halfspaces(x0, regions: RegionHalfspaces, tol=REGION_TOL):
    x0 = np.asarray(x0, dtype=float).ravel()
    return tuple(h for h in regions.plus_region + regions.minus_region
                 if not h.satisfied(x0, tol))


def check_positive_structure(ds: DiscreteLinearSystem,
                             fs: Sequence[HorizonQuadratic]) -> StructureReport:
    """Positive dynamics plus non-positive cost data (except the R diagonal)."""
    if not is_positive(ds):
        return StructureReport(False, "system is not positive (A or B has a negative entry)")
    for i, f in enumerate(fs):
        off_r = f.R - np.diag(np.diag(f.R))
        checks = (("Q", f.Q), ("off-diagonal R", off_r), ("S", f.S), ("q", f.q), ("r", f.r))
        for name, arr in checks:
            if np.any(arr > 0):
                where = tuple(int(v) for v in np.argwhere(arr > 0)[0])
                return StructureReport(
                    False, f"function {i}: {name} has a positive entry at {where}")
    return StructureReport(True)
