"""Sparse direct factorisation and restarted GMRES."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_THRESHOLD = 64


class SingularMatrixError(RuntimeError):
    pass


@dataclass
class LuFactorization:
    """LU factors with a fill-reducing column ordering (or dense LU below a size)."""

    n: int
    splu: object | None = None
    dense: tuple | None = None

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.dense is not None:
            return sla.lu_solve(self.dense, b)
        return self.splu.solve(b)

    __call__ = solve


def sparse_lu(A, dense_threshold: int = DENSE_THRESHOLD) -> LuFactorization:
    """Partial-pivoted LU with COLAMD column ordering.

    Raises :class:`SingularMatrixError` when a zero pivot is met.
    """
    A = sp.csc_matrix(A)
    n, m = A.shape
    if n != m:
        raise ValueError("matrix must be square")
    if n <= dense_threshold:
        Ad = A.toarray()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is raised below
            lu, piv = sla.lu_factor(Ad, check_finite=True)
        d = np.abs(np.diag(lu))
        if n and d.min() <= 1e-14 * max(d.max(), 1.0):
            raise SingularMatrixError("matrix is singular to working precision")
        return LuFactorization(n, dense=(lu, piv))
    try:
        f = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0,
                      options={"SymmetricMode": False})
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return LuFactorization(n, splu=f)


def lu_solve(fact: LuFactorization, b: np.ndarray) -> np.ndarray:
    return fact.solve(b)


@dataclass(frozen=True)
class KrylovConfig:
    restart: int = 100
    rtol: float = 1e-10
    atol: float = 1e-14
    max_iter: int = 200

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.restart < 1 or self.max_iter < 1:
            raise ValueError("restart and max_iter must be positive")


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)


def _as_op(A) -> Callable:
    if A is None:
        return lambda v: v
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda v: A @ v


def gmres(A, M, b, config: KrylovConfig = KrylovConfig(), x0=None,
          nullspace: np.ndarray | None = None) -> KrylovResult:
    """Right-preconditioned restarted GMRES (modified Gram-Schmidt, Givens).

    ``A`` and ``M`` are matrices, linear operators or callables; ``M``
    approximates ``A^-1``.  When ``nullspace`` is given, ``b`` and every
    iterate are projected orthogonal to it.  Converged when
    ``||b - A x|| <= max(rtol ||b||, atol)``.
    """
    Aop, Mop = _as_op(A), _as_op(M)
    b = np.array(b, dtype=float)
    n = len(b)
    if nullspace is not None:
        ns = np.asarray(nullspace, dtype=float)
        ns = ns / np.linalg.norm(ns)
        proj = lambda v: v - ns * (ns @ v)  # noqa: E731
    else:
        proj = lambda v: v  # noqa: E731
    b = proj(b)
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    bnorm = np.linalg.norm(b)
    tol = max(config.rtol * bnorm, config.atol)
    r = b - Aop(x)
    beta = np.linalg.norm(r)
    history = [beta]
    its = 0
    if beta <= tol:
        return KrylovResult(x, 0, True, history)
    m = config.restart
    while its < config.max_iter:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_end = 0
        for j in range(m):
            Z[j] = proj(Mop(V[j]))
            w = Aop(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w = w - H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            its += 1
            j_end = j + 1
            history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= tol or its >= config.max_iter or hnext == 0:
                break
            V[j + 1] = w / hnext
        y = sla.solve_triangular(H[:j_end, :j_end], g[:j_end])
        x = proj(x + Z[:j_end].T @ y)
        # the recurrence estimate decides convergence; the true residual can
        # stall at rounding level for strongly augmented operators
        if abs(g[j_end]) <= tol:
            return KrylovResult(x, its, True, history)
        r = b - Aop(x)
        beta = np.linalg.norm(r)
        if beta <= tol:
            return KrylovResult(x, its, True, history)
        if its >= config.max_iter:
            break
    return KrylovResult(x, its, False, history)
