"""Dirichlet conditions, error norms and matrix dumps."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .quadrature import quadrature_rule
from .space import FunctionSpace


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, space: FunctionSpace,
                    marker: str | Sequence[str], g: Callable | float = 0.0,
                    comp: int | None = None, offset: int = 0):
    """Symmetric elimination of Dirichlet dofs.

    Boundary dofs (shifted by ``offset`` inside a monolithic system) are set to
    the nodal interpolant of ``g``; their rows and columns are zeroed, the
    diagonal set to one and the column contribution moved to the right-hand
    side.

    Returns
    -------
    A, b : modified system
    dofs, values : eliminated global dofs and their lifted values
    """
    local = space.boundary_dofs(marker, comp)
    x, y = space.node_coords[local % space.nnode].T
    comps = local // space.nnode
    if callable(g):
        vals = g(x, y)
        if space.ncomp > 1 and comp is None:
            vals = np.choose(comps, [np.broadcast_to(np.asarray(v, float), x.shape)
                                     for v in vals])
        vals = np.broadcast_to(np.asarray(vals, float), x.shape).copy()
    else:
        vals = np.full(len(local), float(g))
    dofs = local + offset
    A, b = eliminate(A, b, dofs, vals)
    return A, b, dofs, vals


def eliminate(A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, vals: np.ndarray):
    """Symmetric elimination of prescribed ``dofs`` with values ``vals``."""
    A = sp.csr_matrix(A, copy=True)
    b = np.array(b, dtype=float, copy=True)
    n = A.shape[0]
    fixed = np.zeros(n, dtype=bool)
    fixed[dofs] = True
    lift = np.zeros(n)
    lift[dofs] = vals
    b -= A @ lift
    keep = sp.diags((~fixed).astype(float))
    A = (keep @ A @ keep + sp.diags(fixed.astype(float))).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[dofs] = vals
    return A, b


def error_norm(space: FunctionSpace, coeffs: np.ndarray, exact: Callable | None,
               norm: float | str = 2.0, grad_exact: Callable | None = None,
               degree: int | None = None) -> float:
    """``L^s`` norm (``norm=s >= 1``) or H1 seminorm (``norm="H1"``) of the error.

    ``exact(x, y)`` returns a scalar array or a list of per-component arrays;
    ``None`` means zero.  The H1 seminorm needs ``grad_exact(x, y)`` returning
    ``[[d/dx, d/dy] per component]`` unless ``exact`` is ``None``.
    """
    if degree is None:
        degree = min(2 * space.degree + 4, 20)
    rule = quadrature_rule(degree)
    x = space.geometry.push(rule.xi)
    w = np.abs(space.geometry.detJ)[:, None] * rule.weights[None, :]
    val, grad = space.evaluate(coeffs, rule.xi)
    X, Y = x[..., 0], x[..., 1]
    if norm == "H1":
        if grad_exact is not None:
            ge = grad_exact(X, Y)
            ge = np.array([ge]) if space.ncomp == 1 else np.array(ge)
            ge = np.broadcast_to(np.moveaxis(ge, 1, -1), grad.shape)
        elif exact is None:
            ge = 0.0
        else:
            raise ValueError("H1 seminorm needs grad_exact")
        e2 = ((grad - ge) ** 2).sum(axis=(0, -1))
        return float(np.sqrt((w * e2).sum()))
    s = float(norm)
    if s < 1:
        raise ValueError("norm exponent must be >= 1")
    if exact is None:
        ex = 0.0
    else:
        ex = exact(X, Y)
        ex = np.array([np.broadcast_to(ex, X.shape)]) if space.ncomp == 1 else \
            np.array([np.broadcast_to(e, X.shape) for e in ex])
    mag = np.sqrt(((val - ex) ** 2).sum(axis=0))
    return float((w * mag ** s).sum() ** (1.0 / s))


def write_matrix_market(path: str | Path, A: sp.spmatrix) -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
    return path
