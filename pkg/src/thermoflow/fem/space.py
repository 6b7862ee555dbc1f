"""Function spaces, dof maps and field layouts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..mesh import Mesh
from .element import LOCAL_EDGES, ElementSpec, reference_basis, reference_nodes


@dataclass(frozen=True)
class Geometry:
    """Affine cell maps ``x = x0 + J xi``."""

    x0: np.ndarray  # (M, 2)
    J: np.ndarray  # (M, 2, 2)
    invJ: np.ndarray
    detJ: np.ndarray  # (M,)

    @classmethod
    def of(cls, mesh: Mesh) -> "Geometry":
        p = mesh.vertices[mesh.cells]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        return cls(p[:, 0], J, inv, det)

    def push(self, xi: np.ndarray) -> np.ndarray:
        """Reference points ``(nq, 2)`` -> physical ``(M, nq, 2)``."""
        return self.x0[:, None, :] + np.einsum("mij,qj->mqi", self.J, xi)

    def pull(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Physical points ``(F, nq, 2)`` in ``cells`` -> reference coordinates."""
        return np.einsum("fij,fqj->fqi", self.invJ[cells], x - self.x0[cells][:, None, :])

    def grad(self, dref: np.ndarray, cells=slice(None)) -> np.ndarray:
        """Reference gradients ``(..., nq, n, 2)`` -> physical ``(M, nq, n, 2)``."""
        inv = self.invJ[cells]
        if dref.ndim == 3:
            return np.einsum("qai,mij->mqaj", dref, inv)
        return np.einsum("mqai,mij->mqaj", dref, inv)


class FunctionSpace:
    """Scalar Lagrange nodes replicated over ``element.ncomp`` components.

    Global dof of node ``n`` in component ``c`` is ``c * nnode + n``.  For
    continuous spaces nodes are numbered vertices first, then edge nodes, then
    cell-interior nodes.
    """

    def __init__(self, mesh: Mesh, element: ElementSpec):
        self.mesh = mesh
        self.element = element
        k = element.degree
        self.degree = k
        self.ncomp = element.ncomp
        self.nloc = element.nloc
        M = mesh.num_cells
        if element.family == "DG":
            self.cell_nodes = np.arange(M * self.nloc, dtype=np.int64).reshape(M, self.nloc)
            self.nnode = M * self.nloc
        else:
            self.cell_nodes, self.nnode = self._cg_numbering(mesh, k)
        self.ndof = self.ncomp * self.nnode
        self.cell_dofs = np.concatenate(
            [self.cell_nodes + c * self.nnode for c in range(self.ncomp)], axis=1)
        self.geometry = Geometry.of(mesh)
        xref = reference_nodes(k)
        phys = self.geometry.push(xref)
        coords = np.empty((self.nnode, 2))
        coords[self.cell_nodes.ravel()] = phys.reshape(-1, 2)
        self.node_coords = coords

    @staticmethod
    def _cg_numbering(mesh: Mesh, k: int):
        nv, ne, M = mesh.num_vertices, len(mesh.edges), mesh.num_cells
        nint = (k - 1) * (k - 2) // 2
        cols = [mesh.cells]
        for i, (a, _) in enumerate(LOCAL_EDGES):
            e = mesh.cell_edges[:, i]
            forward = mesh.edges[e, 0] == mesh.cells[:, a]
            j = np.arange(k - 1)
            idx = np.where(forward[:, None], j[None, :], (k - 2 - j)[None, :])
            cols.append(nv + e[:, None] * (k - 1) + idx)
        cols.append(nv + ne * (k - 1) + np.arange(M)[:, None] * nint + np.arange(nint)[None, :])
        return np.concatenate(cols, axis=1).astype(np.int64), nv + ne * (k - 1) + M * nint

    @property
    def continuous(self) -> bool:
        return self.element.family == "CG"

    def __repr__(self):
        e = self.element
        return f"FunctionSpace({e.family}{e.degree}, {e.shape}, ndof={self.ndof})"

    # -------------------------------------------------------------- boundary
    def boundary_nodes(self, markers: str | Sequence[str]) -> np.ndarray:
        if not self.continuous:
            raise ValueError("boundary nodes are only defined for continuous spaces")
        mesh = self.mesh
        edges = mesh.facets_with(markers)
        k = self.degree
        nodes = [mesh.edges[edges].ravel()]
        if k > 1:
            nodes.append((mesh.num_vertices + edges[:, None] * (k - 1)
                          + np.arange(k - 1)[None, :]).ravel())
        return np.unique(np.concatenate(nodes))

    def boundary_dofs(self, markers, comp: int | None = None) -> np.ndarray:
        nodes = self.boundary_nodes(markers)
        comps = range(self.ncomp) if comp is None else [comp]
        return np.concatenate([nodes + c * self.nnode for c in comps])

    # ------------------------------------------------------------ functions
    def interpolate(self, f: Callable) -> np.ndarray:
        """Nodal interpolant of ``f(x, y)`` (returns ``ncomp`` arrays or one)."""
        x, y = self.node_coords.T
        vals = f(x, y)
        if self.ncomp == 1:
            return np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()
        vals = [np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in vals]
        return np.concatenate(vals)

    def components(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs).reshape(self.ncomp, self.nnode)

    def evaluate(self, coeffs: np.ndarray, xi: np.ndarray, cells=slice(None)):
        """Values ``(ncomp, M, nq)`` and gradients ``(ncomp, M, nq, 2)``.

        ``xi`` is ``(nq, 2)`` shared by all cells or ``(M, nq, 2)`` per cell.
        """
        C = self.components(coeffs)
        loc = C[:, self.cell_nodes[cells]]  # (nc, M, nloc)
        if xi.ndim == 2:
            phi, dref = reference_basis(self.degree, xi)
            val = np.einsum("cma,qa->cmq", loc, phi)
            dphi = self.geometry.grad(dref, cells)
        else:
            M, nq = xi.shape[:2]
            phi, dref = reference_basis(self.degree, xi.reshape(-1, 2))
            phi = phi.reshape(M, nq, -1)
            dphi = self.geometry.grad(dref.reshape(M, nq, -1, 2), cells)
            val = np.einsum("cma,mqa->cmq", loc, phi)
        grad = np.einsum("cma,mqad->cmqd", loc, dphi)
        return val, grad


@dataclass
class FieldLayout:
    """Ordered fields partitioning a monolithic vector."""

    fields: list[tuple[str, FunctionSpace]]
    pressure: str = "p"
    offsets: dict[str, int] = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise ValueError("duplicate field names")
        if names.count(self.pressure) != 1:
            raise ValueError("pressure field must appear exactly once")
        self.offsets = {}
        off = 0
        for n, V in self.fields:
            self.offsets[n] = off
            off += V.ndof
        self.size = off

    def __contains__(self, name):
        return name in self.offsets

    def space(self, name) -> FunctionSpace:
        return dict(self.fields)[name]

    def slice(self, name) -> slice:
        o = self.offsets[name]
        return slice(o, o + self.space(name).ndof)

    def split(self, z: np.ndarray) -> dict[str, np.ndarray]:
        return {n: z[self.slice(n)] for n, _ in self.fields}

    def join(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        z = np.zeros(self.size)
        for n, v in parts.items():
            z[self.slice(n)] = v
        return z

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.fields]

    @property
    def pressure_slice(self) -> slice:
        return self.slice(self.pressure)
