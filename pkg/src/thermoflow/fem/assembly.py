"""Sparse assembly of cell and interior-facet forms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .element import tabulate
from .quadrature import gauss_line, quadrature_rule
from .space import FunctionSpace


@dataclass
class Tabulation:
    """Component-expanded basis: ``phi[c, q, i]`` and ``dphi[c, m, q, i, d]``."""

    phi: np.ndarray
    dphi: np.ndarray
    dofs: np.ndarray  # (M, ncomp*nloc)


@dataclass
class CellContext:
    x: np.ndarray  # (M, nq, 2)
    w: np.ndarray  # (M, nq) quadrature weight times |det J|
    h: np.ndarray  # (M,) cell diameter
    test: Tabulation
    trial: Tabulation | None


@dataclass
class FacetContext:
    """Interior facets with sides ``+`` (edge_cells[:, 0]) and ``-``."""

    facets: np.ndarray
    cells: np.ndarray  # (F, 2)
    x: np.ndarray  # (F, nq, 2)
    w: np.ndarray  # (F, nq) weight times facet length
    h: np.ndarray  # (F,) facet diameter
    normal: np.ndarray  # (F, 2) pointing from + to -
    test: tuple[Tabulation, Tabulation]
    trial: tuple[Tabulation, Tabulation] | None


def tabulate_space(V: FunctionSpace, xi: np.ndarray, cells=slice(None)) -> Tabulation:
    if xi.ndim == 2:
        phi, dref = tabulate(V.element, xi)
        dphi = np.stack([V.geometry.grad(dref[c], cells) for c in range(V.ncomp)])
        return Tabulation(phi, dphi, V.cell_dofs[cells])
    F, nq = xi.shape[:2]
    phi, dref = tabulate(V.element, xi.reshape(-1, 2))
    nc, _, nd = phi.shape
    phi = phi.reshape(nc, F, nq, nd)
    dref = dref.reshape(nc, F, nq, nd, 2)
    dphi = np.stack([V.geometry.grad(dref[c], cells) for c in range(nc)])
    return Tabulation(phi, dphi, V.cell_dofs[cells])


def cell_context(test: FunctionSpace, trial: FunctionSpace | None, degree: int) -> CellContext:
    rule = quadrature_rule(degree)
    geo = test.geometry
    x = geo.push(rule.xi)
    w = np.abs(geo.detJ)[:, None] * rule.weights[None, :]
    return CellContext(x, w, test.mesh.cell_diameters(), tabulate_space(test, rule.xi),
                       None if trial is None else tabulate_space(trial, rule.xi))


def facet_context(test: FunctionSpace, trial: FunctionSpace | None, degree: int) -> FacetContext:
    mesh = test.mesh
    facets = mesh.interior_edges
    cells = mesh.edge_cells[facets]
    s, ws = gauss_line(degree)
    a = mesh.vertices[mesh.edges[facets, 0]]
    b = mesh.vertices[mesh.edges[facets, 1]]
    t = b - a
    L = np.hypot(t[:, 0], t[:, 1])
    x = a[:, None, :] + s[None, :, None] * t[:, None, :]
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / L[:, None]
    centre = mesh.vertices[mesh.cells[cells[:, 0]]].mean(axis=1)
    flip = ((0.5 * (a + b) - centre) * normal).sum(1) < 0
    normal[flip] *= -1

    def sides(V):
        geo = V.geometry
        return tuple(tabulate_space(V, geo.pull(cells[:, i], x), cells[:, i]) for i in (0, 1))

    return FacetContext(facets, cells, x, L[:, None] * ws[None, :], L, normal,
                        sides(test), None if trial is None else sides(trial))


def _scatter_matrix(rows_loc, cols_loc, vals, shape):
    R = np.broadcast_to(rows_loc[:, :, None], vals.shape)
    C = np.broadcast_to(cols_loc[:, None, :], vals.shape)
    A = sp.coo_matrix((vals.ravel(), (R.ravel(), C.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble(test: FunctionSpace, trial: FunctionSpace | None = None,
             kernel: Callable[[CellContext], np.ndarray] | None = None,
             facet_kernel: Callable[[FacetContext], np.ndarray] | None = None,
             degree: int | None = None):
    """Assemble a bilinear (``trial`` given) or linear form.

    ``kernel`` maps a :class:`CellContext` to local matrices ``(M, nt, ns)`` or
    vectors ``(M, nt)``; ``facet_kernel`` maps a :class:`FacetContext` to local
    arrays on the concatenated dofs of both adjacent cells.
    """
    if trial is not None and trial.mesh is not test.mesh:
        raise ValueError("test and trial spaces must live on the same mesh")
    if degree is None:
        degree = 2 * max(test.degree, trial.degree if trial else 0) + 2
    n = test.ndof
    out = None
    if kernel is not None:
        ctx = cell_context(test, trial, degree)
        loc = kernel(ctx)
        if trial is None:
            if loc.shape != ctx.test.dofs.shape:
                raise ValueError(f"local vector shape {loc.shape} != {ctx.test.dofs.shape}")
            out = np.bincount(ctx.test.dofs.ravel(), loc.ravel(), minlength=n)
        else:
            expect = ctx.test.dofs.shape + ctx.trial.dofs.shape[1:]
            if loc.shape != expect:
                raise ValueError(f"local matrix shape {loc.shape} != {expect}")
            out = _scatter_matrix(ctx.test.dofs, ctx.trial.dofs, loc, (n, trial.ndof))
    if facet_kernel is not None:
        fctx = facet_context(test, trial, degree)
        loc = facet_kernel(fctx)
        rows = np.concatenate([fctx.test[0].dofs, fctx.test[1].dofs], axis=1)
        if trial is None:
            add = np.bincount(rows.ravel(), loc.ravel(), minlength=n)
        else:
            cols = np.concatenate([fctx.trial[0].dofs, fctx.trial[1].dofs], axis=1)
            add = _scatter_matrix(rows, cols, loc, (n, trial.ndof))
        out = add if out is None else out + add
    if out is None:
        raise ValueError("nothing to assemble")
    return out


# ---------------------------------------------------------------- standard kernels
def mass_kernel(ctx: CellContext) -> np.ndarray:
    return np.einsum("mq,cqi,cqj->mij", ctx.w, ctx.test.phi, ctx.trial.phi)


def stiffness_kernel(ctx: CellContext) -> np.ndarray:
    return np.einsum("mq,cmqid,cmqjd->mij", ctx.w, ctx.test.dphi, ctx.trial.dphi)


def divergence_kernel(ctx: CellContext) -> np.ndarray:
    """``-(q, div v)`` with test ``q`` (scalar) and trial ``v`` (vector)."""
    div = ctx.trial.dphi[0, ..., 0] + ctx.trial.dphi[1, ..., 1]  # (M, nq, n)
    return -np.einsum("mq,qi,mqj->mij", ctx.w, ctx.test.phi[0], div)


def mass_matrix(V: FunctionSpace) -> sp.csr_matrix:
    return assemble(V, V, mass_kernel)


def stiffness_matrix(V: FunctionSpace) -> sp.csr_matrix:
    return assemble(V, V, stiffness_kernel)


def divergence_matrix(Q: FunctionSpace, V: FunctionSpace) -> sp.csr_matrix:
    return assemble(Q, V, divergence_kernel)


def cellwise_inverse(A: sp.spmatrix, V: FunctionSpace) -> sp.csr_matrix:
    """Inverse of a block-diagonal matrix on a discontinuous space."""
    if V.continuous:
        raise ValueError("cellwise inverse needs a discontinuous space")
    d = V.cell_dofs
    A = A.tocsr()
    nd = d.shape[1]
    loc = np.empty((len(d), nd, nd))
    for i in range(nd):
        for j in range(nd):
            loc[:, i, j] = np.asarray(A[d[:, i], d[:, j]]).ravel()
    inv = np.linalg.inv(loc)
    return _scatter_matrix(d, d, inv, A.shape)
