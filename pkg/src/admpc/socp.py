"""Second-order cone relaxation of a homogeneous QCQP and rank-1 recovery.

The QCQP ``min z'P0 z  s.t.  z'Pi z <= 0, z0 = 1`` (z = [1; U]) is relaxed by
replacing ``zz'`` with a moment matrix ``X`` of which only the diagonal and
the entries indexed by the support set are kept. Each kept off-diagonal
entry ``X_jk`` is tied to its diagonal pair by the 3-dimensional cone::

    || (X_jj - X_kk, 2 X_jk) ||_2 <= X_jj + X_kk

which is the 2x2 principal-minor condition of ``X >= 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConeDims, ConicResult
from .errors import InvalidInputError, SolverError
from .quadform import HomogeneousFamily

OPTIMAL = conic.OPTIMAL
INFEASIBLE = conic.INFEASIBLE
UNBOUNDED = conic.UNBOUNDED
NUMERICAL_FAILURE = conic.NUMERICAL_FAILURE

# diagonal entries in [-CLAMP_TOL, 0) are rounding dust
CLAMP_TOL = 1e-8
CERT_FEAS_TOL = 1e-6
CERT_GAP_TOL = 1e-6

EXACT = "exact"
GAP_DETECTED = "gap-detected"

Backend = Callable[..., ConicResult]


@dataclass(frozen=True)
class ConicProgram:
    """``min c'y  s.t.  G y + s = h, s in R^l_+ x (Q^3)^q,  A y = b``.

    ``y[:n+1]`` holds the diagonal ``X_00..X_nn`` and ``y[n+1+t]`` the entry
    ``X_jk`` for the t-th pair of ``lambda_set``. The linear block lists the
    ``m`` constraint functionals first, then ``-X_jj <= 0`` for ``j >= 1``.
    """

    c: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    dims: ConeDims
    n: int
    lambda_set: tuple
    m: int
    objective_scale: float = 1.0

    @property
    def num_vars(self) -> int:
        return self.c.size

    def functional(self, P) -> np.ndarray:
        """Coefficients of ``P . X`` over ``y``."""
        return _functional(np.asarray(P, dtype=float), self.n, self.lambda_set)

    def moment_vector(self, U) -> np.ndarray:
        """``y`` of the rank-1 moment matrix ``[1; U][1; U]'``."""
        z = np.concatenate([[1.0], np.asarray(U, dtype=float).ravel()])
        if z.size != self.n + 1:
            raise InvalidInputError(f"U has length {z.size - 1}, expected {self.n}")
        off = [z[j] * z[k] for j, k in self.lambda_set]
        return np.concatenate([z * z, off])


@dataclass(frozen=True)
class ConicSolution:
    status: str
    y: np.ndarray
    s: np.ndarray
    dual_eq: np.ndarray
    dual_cone: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    n: int
    lambda_set: tuple

    @property
    def diagonal(self) -> np.ndarray:
        return self.y[:self.n + 1]

    @property
    def off_diagonal(self) -> dict:
        return {pair: float(v) for pair, v in zip(self.lambda_set, self.y[self.n + 1:])}

    def as_dict(self):
        return {
            "status": self.status,
            "objective": _num(self.objective),
            "diagonal": [_num(v) for v in self.diagonal],
            "lambda_entries": [{"j": j, "k": k, "value": _num(v)}
                               for (j, k), v in self.off_diagonal.items()],
            "primal_residual": _num(self.primal_residual),
            "dual_residual": _num(self.dual_residual),
            "gap": _num(self.gap),
            "iterations": self.iterations,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


@dataclass(frozen=True)
class ExactnessCertificate:
    U: np.ndarray
    values: np.ndarray
    violations: np.ndarray
    qcqp_objective: float
    socp_objective: float
    gap: float
    verdict: str
    feas_tol: float
    gap_tol: float

    @property
    def exact(self) -> bool:
        return self.verdict == EXACT

    @property
    def max_violation(self) -> float:
        return float(self.violations.max(initial=0.0))

    def as_dict(self):
        return {
            "U": [_num(v) for v in self.U],
            "qcqp_objective": _num(self.qcqp_objective),
            "socp_objective": _num(self.socp_objective),
            "gap": _num(self.gap),
            "max_violation": _num(self.max_violation),
            "violations": [_num(v) for v in self.violations],
            "verdict": self.verdict,
        }


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def _functional(P, n, lambda_set):
    if P.shape != (n + 1, n + 1):
        raise InvalidInputError(f"matrix {P.shape} does not match n={n}")
    off = [2.0 * P[j, k] for j, k in lambda_set]
    return np.concatenate([np.diag(P), off])


def _equilibrate(row):
    scale = float(np.abs(row).max(initial=0.0))
    return (row / scale, scale) if scale > 0 else (row, 1.0)


def build_relaxation(fam: HomogeneousFamily) -> ConicProgram:
    n, lam, m = fam.n, tuple(fam.lambda_set), fam.m
    nd = n + 1
    nvar = nd + len(lam)

    c, cscale = _equilibrate(_functional(fam.P[0], n, lam))
    rows = [_equilibrate(_functional(P, n, lam))[0] for P in fam.P[1:]]
    lin = np.array(rows).reshape(m, nvar)
    nonneg = np.zeros((n, nvar))
    nonneg[np.arange(n), np.arange(1, nd)] = -1.0

    # s = h - G y = (X_jj + X_kk, X_jj - X_kk, 2 X_jk)
    soc_r, soc_c, soc_v = [], [], []
    for t, (j, k) in enumerate(lam):
        base = 3 * t
        soc_r += [base, base, base + 1, base + 1, base + 2]
        soc_c += [j, k, j, k, nd + t]
        soc_v += [-1.0, -1.0, -1.0, 1.0, -2.0]
    soc = sp.coo_matrix((soc_v, (soc_r, soc_c)), shape=(3 * len(lam), nvar))

    G = sp.vstack([sp.csr_matrix(lin), sp.csr_matrix(nonneg), soc]).tocsr()
    dims = ConeDims(m + n, len(lam))
    h = np.zeros(dims.size)
    A = sp.csr_matrix(([1.0], ([0], [0])), shape=(1, nvar))
    b = np.ones(1)
    for arr in (c, h, b):
        arr.setflags(write=False)
    return ConicProgram(c, G, h, A, b, dims, n, lam, m, cscale)


def builtin_backend(c, G, h, dims, A, b, **opts) -> ConicResult:
    return conic.solve_conic(c, G, h, dims, A, b, **opts)


def solve(cp: ConicProgram, feas_tol=1e-8, gap_tol=1e-8, max_iter=200, verbose=False,
          backend: Optional[Backend] = None) -> ConicSolution:
    """Solve the relaxation; status is reported, not raised."""
    backend = backend or builtin_backend
    res = backend(cp.c, cp.G, cp.h, cp.dims, cp.A, cp.b, feas_tol=feas_tol,
                  gap_tol=gap_tol, max_iter=max_iter, verbose=verbose)
    return ConicSolution(res.status, np.asarray(res.x), np.asarray(res.s), np.asarray(res.y),
                         np.asarray(res.z), float(res.pcost) * cp.objective_scale, res.pres, res.dres, res.gap,
                         res.iterations, cp.n, cp.lambda_set)


def recompute_residuals(cp: ConicProgram, sol: ConicSolution):
    """Primal and dual residuals from the solution vectors alone."""
    return conic.residuals(cp.c, cp.G, cp.h, cp.A, cp.b, sol.y, sol.s, sol.dual_eq,
                           sol.dual_cone)


def reconstruct(sol: ConicSolution, sigma_bar) -> np.ndarray:
    """``U_k = sigma_0 sigma_k sqrt(X_kk)``."""
    if sol.status != OPTIMAL:
        raise SolverError(f"cannot reconstruct from a {sol.status} solution", sol.status)
    s = np.asarray(sigma_bar, dtype=float)
    if s.size != sol.n + 1:
        raise InvalidInputError(f"lifted sign vector has length {s.size}, expected {sol.n + 1}")
    diag = sol.diagonal[1:]
    if np.any(diag < -CLAMP_TOL):
        k = int(np.argmin(diag))
        raise SolverError(f"diagonal entry X_{k + 1}{k + 1} = {diag[k]:.3e} is negative",
                          NUMERICAL_FAILURE)
    return s[0] * s[1:] * np.sqrt(np.maximum(diag, 0.0))


def certify(fam: HomogeneousFamily, sol: ConicSolution, U, feas_tol=CERT_FEAS_TOL,
            gap_tol=CERT_GAP_TOL) -> ExactnessCertificate:
    U = np.asarray(U, dtype=float).ravel()
    vals = fam.values(U)
    viol = np.maximum(vals[1:], 0.0)
    obj = float(vals[0])
    gap = obj - sol.objective
    ok = (viol.max(initial=0.0) <= feas_tol
          and abs(gap) <= gap_tol * (1.0 + abs(sol.objective)))
    return ExactnessCertificate(U, vals, viol, obj, float(sol.objective), float(gap),
                                EXACT if ok else GAP_DETECTED, feas_tol, gap_tol)
