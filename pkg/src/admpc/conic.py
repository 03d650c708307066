"""Primal-dual interior-point solver for LPs with 3-dimensional second-order cones.

Solves::

    minimize    c'x
    subject to  G x + s = h,   A x = b,   s in K

    K = R^l_+  x  Q^3 x ... x Q^3,      Q^3 = {(t, u) : |u|_2 <= t}

through the homogeneous self-dual embedding, with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps. The dual is::

    maximize   -b'y - h'z
    subject to  G'z + A'y + c = 0,   z in K
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

STEP_FRACTION = 0.99


@dataclass(frozen=True)
class ConeDims:
    l: int
    q: int

    @property
    def size(self) -> int:
        return self.l + 3 * self.q

    @property
    def degree(self) -> int:
        return self.l + self.q


@dataclass
class ConicResult:
    status: str
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    pcost: float
    dcost: float
    pres: float
    dres: float
    gap: float
    iterations: int


# ---------------------------------------------------------------- cone algebra

class _Cone:
    """Vectorised Jordan-algebra operations on R^l_+ x (Q^3)^q."""

    def __init__(self, dims: ConeDims):
        self.l, self.q = dims.l, dims.q
        self.dims = dims
        idx = np.arange(3 * self.q).reshape(self.q, 3) + self.l
        self.block_rows = np.repeat(idx, 3, axis=1).ravel()
        self.block_cols = np.tile(idx, (1, 3)).ravel()

    def split(self, v):
        return v[:self.l], v[self.l:].reshape(self.q, 3)

    def join(self, lin, soc):
        return np.concatenate([lin, soc.ravel()])

    def e(self):
        soc = np.zeros((self.q, 3))
        soc[:, 0] = 1.0
        return self.join(np.ones(self.l), soc)

    def min_eig(self, v):
        lin, soc = self.split(v)
        vals = [lin.min()] if self.l else []
        if self.q:
            vals.append((soc[:, 0] - np.linalg.norm(soc[:, 1:], axis=1)).min())
        return min(vals)

    def circ(self, u, v):
        ul, us = self.split(u)
        vl, vs = self.split(v)
        out = np.empty((self.q, 3))
        out[:, 0] = np.einsum("ij,ij->i", us, vs)
        out[:, 1:] = us[:, :1] * vs[:, 1:] + vs[:, :1] * us[:, 1:]
        return self.join(ul * vl, out)

    def inv_circ(self, lam, v):
        """Solve lam o w = v for w."""
        ll, ls = self.split(lam)
        vl, vs = self.split(v)
        det = ls[:, 0] ** 2 - np.einsum("ij,ij->i", ls[:, 1:], ls[:, 1:])
        w0 = (ls[:, 0] * vs[:, 0] - np.einsum("ij,ij->i", ls[:, 1:], vs[:, 1:])) / det
        w1 = (vs[:, 1:] - w0[:, None] * ls[:, 1:]) / ls[:, :1]
        return self.join(vl / ll, np.column_stack([w0, w1]))

    def max_step(self, v, dv):
        """Largest alpha with v + alpha dv in K (v interior); inf if unbounded."""
        alpha = np.inf
        vl, vs = self.split(v)
        dl, ds = self.split(dv)
        if self.l:
            neg = dl < 0
            if neg.any():
                alpha = min(alpha, float(np.min(-vl[neg] / dl[neg])))
        if self.q:
            a = ds[:, 0] ** 2 - np.einsum("ij,ij->i", ds[:, 1:], ds[:, 1:])
            b = 2 * (vs[:, 0] * ds[:, 0] - np.einsum("ij,ij->i", vs[:, 1:], ds[:, 1:]))
            c = vs[:, 0] ** 2 - np.einsum("ij,ij->i", vs[:, 1:], vs[:, 1:])
            alpha = min(alpha, _smallest_positive_root(a, b, c))
        return alpha


def _smallest_positive_root(a, b, c):
    """Smallest positive root over rows of a t^2 + b t + c (c > 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        qq = -0.5 * (b + np.where(b >= 0, sq, -sq))
        r1 = np.where(a != 0, qq / a, np.inf)
        r2 = np.where(qq != 0, c / qq, np.inf)
        r1 = np.where((disc >= 0) & (r1 > 0), r1, np.inf)
        r2 = np.where((disc >= 0) & (r2 > 0), r2, np.inf)
        # a == 0: linear equation b t + c = 0
        lin = np.where((a == 0) & (b < 0), -c / b, np.inf)
    roots = np.minimum(np.minimum(r1, r2), lin)
    return float(roots.min()) if roots.size else np.inf


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda (W symmetric)."""

    def __init__(self, cone: _Cone, s, z):
        self.cone = cone
        sl, ss = cone.split(s)
        zl, zs = cone.split(z)
        self.d = np.sqrt(sl / zl)

        J = np.diag([1.0, -1.0, -1.0])
        sdet = np.sqrt(ss[:, 0] ** 2 - np.einsum("ij,ij->i", ss[:, 1:], ss[:, 1:]))
        zdet = np.sqrt(zs[:, 0] ** 2 - np.einsum("ij,ij->i", zs[:, 1:], zs[:, 1:]))
        sbar = ss / sdet[:, None]
        zbar = zs / zdet[:, None]
        gamma = np.sqrt(0.5 * (1.0 + np.einsum("ij,ij->i", sbar, zbar)))
        wbar = (sbar + zbar @ J) / (2 * gamma[:, None])
        v = wbar.copy()
        v[:, 0] += 1.0
        v /= np.sqrt(2 * (wbar[:, :1] + 1.0))
        eta = np.sqrt(sdet / zdet)
        self.W = eta[:, None, None] * (2 * np.einsum("ij,ik->ijk", v, v) - J)
        jv = v @ J
        self.Winv = (2 * np.einsum("ij,ik->ijk", jv, jv) - J) / eta[:, None, None]
        self.lam = self.apply(z)

    def _blockwise(self, lin_scale, mats, v):
        vl, vs = self.cone.split(v)
        return self.cone.join(lin_scale * vl, np.einsum("ijk,ik->ij", mats, vs))

    def apply(self, v):
        return self._blockwise(self.d, self.W, v)

    def apply_inv(self, v):
        return self._blockwise(1.0 / self.d, self.Winv, v)

    def inv_matrix(self):
        """W^{-1} as a sparse block-diagonal matrix."""
        cone = self.cone
        n = cone.dims.size
        diag = sp.diags(np.concatenate([1.0 / self.d, np.zeros(3 * cone.q)]))
        if not cone.q:
            return diag.tocsr()
        blocks = sp.coo_matrix((self.Winv.ravel(), (cone.block_rows, cone.block_cols)),
                               shape=(n, n))
        return (diag + blocks).tocsr()


# ---------------------------------------------------------------- KKT solves

class _KKT:
    """Solves [[0, A', G'], [A, 0, 0], [G, 0, -W^2]] [x; y; z] = [bx; by; bz].

    Works on the scaled system in (x, y, w = W z) with Gt = W^{-1} G so that
    only W and W^{-1} are ever applied; forming W^2 and W^{-2} separately
    loses all accuracy once the scaling becomes badly conditioned. The
    augmented matrix is factored directly (sparse LU with a tiny static
    regularisation) rather than through normal equations, which would
    square its condition number.
    """

    REG = 1e-13

    def __init__(self, G, A, scaling: _Scaling, refine=6):
        self.A, self.G, self.scaling, self.refine = A, G, scaling, refine
        self.Gt = (scaling.inv_matrix() @ G).tocsr()
        nx, ny, nz = G.shape[1], A.shape[0], G.shape[0]
        self.sizes = (nx, ny, nz)
        K = sp.bmat([[self.REG * sp.eye(nx), A.T, self.Gt.T],
                     [A, -self.REG * sp.eye(ny) if ny else None, None],
                     [self.Gt, None, -sp.eye(nz)]], format="csc")
        self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")

    def _solve_scaled(self, bx, by, bw):
        nx, ny, _ = self.sizes
        sol = self.lu.solve(np.concatenate([bx, by, bw]))
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("KKT solve produced non-finite values")
        return sol[:nx], sol[nx:nx + ny], sol[nx + ny:]

    def solve(self, bx, by, bz):
        """Returns x, y, z and the scaled w = W z.

        Refinement measures the residual of the unscaled rows, since the
        dual row ``A'y + G'z`` is what the stopping test reads.
        """
        A, G, sc = self.A, self.G, self.scaling
        x, y, w = self._solve_scaled(bx, by, sc.apply_inv(bz))
        z = sc.apply_inv(w)
        scale = max(1.0, *(np.abs(v).max(initial=0.0) for v in (bx, by, bz)))
        for _ in range(self.refine):
            rx = bx - (A.T @ y + G.T @ z)
            ry = by - A @ x
            rz = bz - (G @ x - sc.apply(w))
            err = max(np.abs(v).max(initial=0.0) for v in (rx, ry, rz))
            if err <= 1e-15 * scale:
                break
            dx, dy, dw = self._solve_scaled(rx, ry, sc.apply_inv(rz))
            x, y, w = x + dx, y + dy, w + dw
            z = sc.apply_inv(w)
        return x, y, z, w


class _IdentityScaling(_Scaling):
    def __init__(self, cone: _Cone):
        self.cone = cone
        self.d = np.ones(cone.l)
        eye = np.broadcast_to(np.eye(3), (cone.q, 3, 3)).copy()
        self.W = self.Winv = eye


# ---------------------------------------------------------------- main loop

def residuals(c, G, h, A, b, x, s, y, z):
    """Normalised primal and dual residuals of a (non-homogenised) iterate.

    Uses the same scaling as the solver's stopping test, so a returned
    :class:`ConicResult` can be re-checked from its vectors alone.
    """
    c, h, b = (np.asarray(v, dtype=float) for v in (c, h, b))
    G, A = sp.csr_matrix(G), sp.csr_matrix(A)
    hnorm = max(1.0, np.linalg.norm(h), np.linalg.norm(b))
    cnorm = max(1.0, np.linalg.norm(c))
    pres = max(np.linalg.norm(A @ x - b), np.linalg.norm(G @ x + s - h)) / hnorm
    dres = np.linalg.norm(A.T @ y + G.T @ z + c) / cnorm
    return float(pres), float(dres)


def solve_conic(c, G, h, dims: ConeDims, A=None, b=None, *, feas_tol=1e-8, gap_tol=1e-8,
                max_iter=200, verbose=False) -> ConicResult:
    c = np.asarray(c, dtype=float)
    h = np.asarray(h, dtype=float)
    nvar = c.size
    G = sp.csr_matrix(G)
    if A is None:
        A = sp.csr_matrix((0, nvar))
        b = np.zeros(0)
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if G.shape != (dims.size, nvar) or h.shape != (dims.size,):
        raise ValueError(f"G{G.shape}, h{h.shape} do not match cone size {dims.size}")
    if A.shape != (b.size, nvar):
        raise ValueError(f"A{A.shape} does not match b{b.shape}")

    cone = _Cone(dims)
    e = cone.e()
    ncone = dims.degree
    hnorm = max(1.0, np.linalg.norm(h), np.linalg.norm(b))
    cnorm = max(1.0, np.linalg.norm(c))
    reporter = log.info if verbose else log.debug

    def fail(status, it, x, s, y, z, tau, pres=np.inf, dres=np.inf, gap=np.inf):
        return ConicResult(status, x / tau, s / tau, y / tau, z / tau, np.nan, np.nan,
                           pres, dres, gap, it)

    # starting point: least-squares primal and dual points pushed into the cone
    kkt0 = _KKT(G, A, _IdentityScaling(cone))
    x, _, zr, _ = kkt0.solve(np.zeros(nvar), b, h)
    s = -zr
    alpha = -cone.min_eig(s)
    if alpha >= -1e-8:
        s = s + (1.0 + alpha) * e
    _, y, z, _ = kkt0.solve(-c, np.zeros(b.size), np.zeros(dims.size))
    alpha = -cone.min_eig(z)
    if alpha >= -1e-8:
        z = z + (1.0 + alpha) * e
    tau = kappa = 1.0

    best = None
    for it in range(max_iter + 1):
        r1 = A.T @ y + G.T @ z + c * tau
        r2 = A @ x - b * tau
        r3 = G @ x + s - h * tau
        cx, by_hz = c @ x, b @ y + h @ z
        r4 = cx + by_hz + kappa
        mu = (s @ z + tau * kappa) / (ncone + 1)

        pres = max(np.linalg.norm(r2), np.linalg.norm(r3)) / hnorm / tau
        dres = np.linalg.norm(r1) / cnorm / tau
        pcost, dcost = cx / tau, -by_hz / tau
        gap = (s @ z) / tau ** 2
        relgap = gap / max(1.0, abs(pcost))
        reporter("it %3d  pcost % .9e  dcost % .9e  pres %.2e  dres %.2e  gap %.2e  "
                 "tau %.2e  kappa %.2e", it, pcost, dcost, pres, dres, gap, tau, kappa)

        if pres <= feas_tol and dres <= feas_tol and relgap <= gap_tol:
            return ConicResult(OPTIMAL, x / tau, s / tau, y / tau, z / tau, pcost, dcost,
                               pres, dres, gap, it)
        score = max(pres, dres, relgap)
        if best is None or score < best[0]:
            best = (score, it, x.copy(), s.copy(), y.copy(), z.copy(), tau)

        # certificates of infeasibility (dual ray) and unboundedness (primal ray)
        if by_hz < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / (-by_hz) * max(1.0, np.linalg.norm(c))
            if pinf <= feas_tol and tau < kappa:
                scale = -1.0 / by_hz
                return ConicResult(INFEASIBLE, np.full(nvar, np.nan), np.full(dims.size, np.nan),
                                   y * scale, z * scale, np.nan, np.nan, np.inf, np.inf,
                                   np.inf, it)
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / (-cx) * hnorm
            if dinf <= feas_tol and tau < kappa:
                scale = -1.0 / cx
                return ConicResult(UNBOUNDED, x * scale, s * scale, np.full(b.size, np.nan),
                                   np.full(dims.size, np.nan), -np.inf, np.nan,
                                   np.inf, np.inf, np.inf, it)
        if it == max_iter:
            break

        try:
            scaling = _Scaling(cone, s, z)
            kkt = _KKT(G, A, scaling)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError, RuntimeError):
            log.debug("KKT factorization failed at iteration %d", it)
            break
        lam = scaling.lam
        lam_sq = cone.circ(lam, lam)
        x1, y1, z1, w1 = kkt.solve(-c, b, h)
        denom = -(w1 @ w1) - kappa / tau

        def direction(eta, ds_c, dk_c):
            bx = -eta * r1
            by = -eta * r2
            bz = -eta * r3 - scaling.apply(cone.inv_circ(lam, ds_c))
            rhs4 = -eta * r4 - dk_c / tau
            x2, y2, z2, w2 = kkt.solve(bx, by, bz)
            dtau = (rhs4 - (c @ x2 + b @ y2 + h @ z2)) / denom
            dx, dy, dz = x2 + dtau * x1, y2 + dtau * y1, z2 + dtau * z1
            # the linear row defines ds exactly; the complementarity form drifts
            ds = -eta * r3 - G @ dx + h * dtau
            dkappa = (dk_c - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_length(dz, ds, dtau, dkappa):
            alpha = min(cone.max_step(s, ds), cone.max_step(z, dz))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        # predictor
        aff = direction(1.0, -lam_sq, -tau * kappa)
        alpha_aff = min(1.0, step_length(*aff[2:]))
        sigma = (1.0 - alpha_aff) ** 3
        # corrector
        ws = scaling.apply_inv(aff[3])
        wz = scaling.apply(aff[2])
        ds_c = -lam_sq + sigma * mu * e - cone.circ(ws, wz)
        dk_c = -tau * kappa + sigma * mu - aff[4] * aff[5]
        dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, ds_c, dk_c)
        alpha = min(1.0, STEP_FRACTION * step_length(dz, ds, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 1e-12:
            log.debug("step length collapsed at iteration %d", it)
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and tau > 0):
            break

    _, it_b, xb, sb, yb, zb, taub = best
    return fail(NUMERICAL_FAILURE, it, xb, sb, yb, zb, taub)
