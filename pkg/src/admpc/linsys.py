"""Linear system models, zero-order-hold discretization and horizon prediction.

The stacked horizon quantities follow the usual condensed-MPC layout::

    X = [x(0); x(1); ...; x(N)]        U = [u(0); ...; u(N-1)]
    X = Sx @ x0 + Su @ U
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, InvalidHorizonError, InvalidInputError

# discretization can leave -1e-17 artifacts on structurally zero entries
ZOH_POSITIVITY_TOL = 1e-12


def _frozen(a, name, ndim=2):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_pair(A, B, names):
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{names[0]} must be square, got {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise DimensionError(
            f"{names[1]} has {B.shape[0]} rows but {names[0]} is {A.shape[0]}x{A.shape[0]}"
        )


@dataclass(frozen=True)
class ContinuousLinearSystem:
    """dx/dt = A_c x + B_c u."""

    A_c: np.ndarray
    B_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A_c", _frozen(self.A_c, "A_c"))
        object.__setattr__(self, "B_c", _frozen(self.B_c, "B_c"))
        _check_pair(self.A_c, self.B_c, ("A_c", "B_c"))

    @property
    def nx(self) -> int:
        return self.A_c.shape[0]

    @property
    def nu(self) -> int:
        return self.B_c.shape[1]


@dataclass(frozen=True)
class DiscreteLinearSystem:
    """x(k+1) = A x(k) + B u(k).

    ``positivity_tol`` is the slack used by :func:`is_positive`; it is zero for
    user-supplied matrices and :data:`ZOH_POSITIVITY_TOL` for discretized ones.
    """

    A: np.ndarray
    B: np.ndarray
    dt: Optional[float] = None
    positivity_tol: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A, "A"))
        object.__setattr__(self, "B", _frozen(self.B, "B"))
        _check_pair(self.A, self.B, ("A", "B"))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class PredictionMatrices:
    Sx: np.ndarray
    Su: np.ndarray
    N: int

    @property
    def nx(self) -> int:
        return self.Sx.shape[1]

    @property
    def nu(self) -> int:
        return self.Su.shape[1] // self.N

    def su_block(self, j: int, k: int) -> np.ndarray:
        """Block (j, k) of Su, i.e. the effect of u(k) on x(j)."""
        nx, nu = self.nx, self.nu
        return self.Su[j * nx:(j + 1) * nx, k * nu:(k + 1) * nu]


def zoh_discretize(cs: ContinuousLinearSystem, dt: float) -> DiscreteLinearSystem:
    """Zero-order-hold discretization with sample time ``dt``.

    Uses the exponential of the augmented matrix ``[[A_c, B_c], [0, 0]] * dt``,
    whose top blocks are ``exp(A_c dt)`` and ``int_0^dt exp(A_c t) dt B_c``.
    """
    dt = float(dt)
    if not np.isfinite(dt) or dt <= 0:
        raise InvalidInputError(f"sample time must be positive and finite, got {dt}")
    nx, nu = cs.nx, cs.nu
    aug = np.zeros((nx + nu, nx + nu))
    aug[:nx, :nx] = cs.A_c
    aug[:nx, nx:] = cs.B_c
    phi = expm(aug * dt)
    return DiscreteLinearSystem(
        phi[:nx, :nx], phi[:nx, nx:], dt=dt, positivity_tol=ZOH_POSITIVITY_TOL
    )


def is_positive(ds: DiscreteLinearSystem) -> bool:
    """True iff A >= 0 and B >= 0 element-wise."""
    tol = ds.positivity_tol
    return bool(np.all(ds.A >= -tol) and np.all(ds.B >= -tol))


def prediction_matrices(ds: DiscreteLinearSystem, N: int) -> PredictionMatrices:
    if int(N) != N or N < 1:
        raise InvalidHorizonError(f"horizon must be a positive integer, got {N!r}")
    N = int(N)
    nx, nu = ds.nx, ds.nu
    powers = [np.eye(nx)]
    for _ in range(N):
        powers.append(ds.A @ powers[-1])
    # A^i B for i = 0..N-1
    ab = [p @ ds.B for p in powers[:N]]

    Sx = np.vstack(powers)
    Su = np.zeros(((N + 1) * nx, N * nu))
    for j in range(1, N + 1):
        for k in range(j):
            Su[j * nx:(j + 1) * nx, k * nu:(k + 1) * nu] = ab[j - 1 - k]
    Sx.setflags(write=False)
    Su.setflags(write=False)
    return PredictionMatrices(Sx, Su, N)


def propagate(ds: DiscreteLinearSystem, x0, U) -> np.ndarray:
    """Stacked state sequence [x(0); ...; x(N)] by step-by-step recursion."""
    x = np.asarray(x0, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if x.size != ds.nx:
        raise DimensionError(f"x0 has length {x.size}, expected {ds.nx}")
    if U.size == 0 or U.size % ds.nu:
        raise DimensionError(f"U has length {U.size}, not a positive multiple of n_u={ds.nu}")
    states = [x]
    for u in U.reshape(-1, ds.nu):
        x = ds.A @ x + ds.B @ u
        states.append(x)
    return np.concatenate(states)
