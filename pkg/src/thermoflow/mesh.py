"""Triangular meshes of rectangles: generation, grading, refinement, metrics.

A :class:`Mesh` is immutable after construction.  Refinement returns a new
mesh whose boundary facets inherit the markers of their parents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MARKERS = ("left", "right", "top", "bottom", "inlet", "outlet", "walls",
           "hot", "cold", "insulated")


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with marked boundary facets.

    Parameters
    ----------
    vertices : (N, 2) array
    cells : (M, 3) int array, counter-clockwise
    marked_facets : (K, 2) int array of boundary vertex pairs
    facet_names : (K,) str array of markers for ``marked_facets``
    level : refinement counter
    alfeld : True if produced by a barycentric (Alfeld) split
    """

    vertices: np.ndarray
    cells: np.ndarray
    marked_facets: np.ndarray
    facet_names: np.ndarray
    level: int = 0
    alfeld: bool = False
    # derived connectivity, filled in __post_init__
    edges: np.ndarray = field(init=False, repr=False)
    cell_edges: np.ndarray = field(init=False, repr=False)
    edge_cells: np.ndarray = field(init=False, repr=False)
    boundary_edges: np.ndarray = field(init=False, repr=False)
    boundary_markers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=float)
        C = np.ascontiguousarray(self.cells, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 2 or C.ndim != 2 or C.shape[1] != 3:
            raise MeshError("vertices must be (N, 2) and cells (M, 3)")
        if not np.all(np.isfinite(V)):
            raise MeshError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "cells", C)

        nv = len(V)
        # local edge i is opposite local vertex i
        loc = np.stack([C[:, [1, 2]], C[:, [2, 0]], C[:, [0, 1]]], axis=1)
        pairs = np.sort(loc.reshape(-1, 2), axis=1)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        ukeys, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        edges = pairs[first]
        cell_edges = inv.reshape(-1, 3)
        counts = np.bincount(inv, minlength=len(ukeys))
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: edge shared by more than two cells")
        edge_cells = -np.ones((len(edges), 2), dtype=np.int64)
        cell_of = np.repeat(np.arange(len(C)), 3)
        order = np.argsort(inv, kind="stable")
        sorted_edges = inv[order]
        starts = np.searchsorted(sorted_edges, np.arange(len(edges)))
        edge_cells[:, 0] = cell_of[order[starts]]
        two = counts == 2
        edge_cells[two, 1] = cell_of[order[starts[two] + 1]]

        bnd = np.flatnonzero(~two)
        mf = np.sort(np.asarray(self.marked_facets, dtype=np.int64).reshape(-1, 2), axis=1)
        names = np.asarray(self.facet_names, dtype="<U10").reshape(-1)
        if len(mf) != len(names):
            raise MeshError("marked_facets and facet_names differ in length")
        mkeys = mf[:, 0] * nv + mf[:, 1]
        pos = np.searchsorted(ukeys, mkeys)
        pos = np.minimum(pos, len(ukeys) - 1)
        if len(mkeys) and (np.any(ukeys[pos] != mkeys) or np.any(two[pos])):
            raise MeshError("marked facet is not a boundary edge of the mesh")
        markers = np.full(len(edges), "", dtype="<U10")
        markers[pos] = names
        if np.any(markers[bnd] == ""):
            raise MeshError("every boundary facet must carry a marker")

        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cell_edges", cell_edges)
        object.__setattr__(self, "edge_cells", edge_cells)
        object.__setattr__(self, "boundary_edges", bnd)
        object.__setattr__(self, "boundary_markers", markers[bnd])

        if np.any(self.signed_areas() <= 0):
            raise MeshError("cells must have strictly positive signed area")

    # ------------------------------------------------------------------ views
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    @property
    def boundary_facets(self) -> list[tuple[tuple[int, int], str]]:
        return [((int(a), int(b)), str(m)) for (a, b), m in
                zip(self.edges[self.boundary_edges], self.boundary_markers)]

    @property
    def interior_facets(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        ie = self.interior_edges
        return [((int(a), int(b)), (int(c), int(d))) for (a, b), (c, d) in
                zip(self.edges[ie], self.edge_cells[ie])]

    @property
    def markers(self) -> set[str]:
        return set(self.boundary_markers.tolist())

    def facets_with(self, markers: str | Sequence[str]) -> np.ndarray:
        """Edge indices of boundary facets carrying any of ``markers``."""
        if isinstance(markers, str):
            markers = [markers]
        missing = set(markers) - self.markers
        if missing:
            raise MeshError(f"marker(s) {sorted(missing)} absent from mesh")
        sel = np.isin(self.boundary_markers, list(markers))
        return self.boundary_edges[sel]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def cell_diameters(self) -> np.ndarray:
        return self.edge_lengths()[self.cell_edges].max(axis=1)

    def min_angle(self) -> float:
        """Smallest interior angle of any cell, in degrees."""
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            c = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return float(np.min(angles))

    def relabel(self, rule: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]) -> "Mesh":
        """Return a copy whose boundary markers are ``rule(xmid, ymid, old)``."""
        e = self.edges[self.boundary_edges]
        mid = 0.5 * (self.vertices[e[:, 0]] + self.vertices[e[:, 1]])
        names = np.asarray(rule(mid[:, 0], mid[:, 1], self.boundary_markers.copy()))
        return Mesh(self.vertices, self.cells, e, names, self.level, self.alfeld)


def _grade(xi: np.ndarray, g: float) -> np.ndarray:
    if g == 0:
        return xi
    return 0.5 * (1.0 + np.tanh(g * (2.0 * xi - 1.0)) / np.tanh(g))


def generate_rect_mesh(nx: int, ny: int, extent: tuple[float, float] = (1.0, 1.0),
                       grading: float = 0.0, origin: tuple[float, float] = (0.0, 0.0),
                       centre_grading: float = 0.0) -> Mesh:
    """Structured mesh of ``origin + [0, Lx] x [0, Ly]``.

    Each rectangle is cut along one diagonal, alternating in a checkerboard
    pattern.  ``grading > 0`` clusters nodes towards ``x = 0`` and ``x = Lx``
    through a symmetric tanh stretch; ``centre_grading > 0`` clusters rows
    towards the mid-height line through ``eta -> sign(eta) |eta|^(1 + g)``.
    """
    nx, ny = int(nx), int(ny)
    Lx, Ly = map(float, extent)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    if not (Lx > 0 and Ly > 0):
        raise MeshError("extent must be positive")
    if grading < 0 or centre_grading < 0:
        raise MeshError("grading must be non-negative")
    x = origin[0] + Lx * _grade(np.linspace(0.0, 1.0, nx + 1), grading)
    eta = np.linspace(-1.0, 1.0, ny + 1)
    eta = np.sign(eta) * np.abs(eta) ** (1.0 + centre_grading)
    y = origin[1] + 0.5 * Ly * (eta + 1.0)
    X, Y = np.meshgrid(x, y)  # row j holds y[j]
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    a, b, c, d = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    flip = (I + J) % 2 == 1
    t1 = np.where(flip[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(flip[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    cells = np.empty((2 * len(I), 3), dtype=np.int64)
    cells[0::2] = t1
    cells[1::2] = t2

    ii = np.arange(nx)
    jj = np.arange(ny)
    facets = np.concatenate([
        np.column_stack([vid(ii, 0), vid(ii + 1, 0)]),
        np.column_stack([vid(ii, ny), vid(ii + 1, ny)]),
        np.column_stack([vid(0, jj), vid(0, jj + 1)]),
        np.column_stack([vid(nx, jj), vid(nx, jj + 1)]),
    ])
    names = np.array(["bottom"] * nx + ["top"] * nx + ["left"] * ny + ["right"] * ny)
    return Mesh(verts, cells, facets, names)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into four through edge midpoints."""
    nv = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_edges).T
    cells = np.concatenate([
        np.column_stack([v0, m2, m1]),
        np.column_stack([v1, m0, m2]),
        np.column_stack([v2, m1, m0]),
        np.column_stack([m0, m1, m2]),
    ])
    be = mesh.boundary_edges
    e = mesh.edges[be]
    facets = np.concatenate([np.column_stack([e[:, 0], nv + be]),
                             np.column_stack([nv + be, e[:, 1]])])
    names = np.concatenate([mesh.boundary_markers, mesh.boundary_markers])
    return Mesh(verts, cells, facets, names, mesh.level + 1)


def barycentric_refine(mesh: Mesh) -> Mesh:
    """Alfeld split: every triangle split into three through its barycentre."""
    nv = mesh.num_vertices
    bary = mesh.vertices[mesh.cells].mean(axis=1)
    verts = np.vstack([mesh.vertices, bary])
    c = nv + np.arange(mesh.num_cells)
    v0, v1, v2 = mesh.cells.T
    cells = np.concatenate([
        np.column_stack([v0, v1, c]),
        np.column_stack([v1, v2, c]),
        np.column_stack([v2, v0, c]),
    ])
    return Mesh(verts, cells, mesh.edges[mesh.boundary_edges], mesh.boundary_markers,
                mesh.level + 1, alfeld=True)


def mesh_metrics(mesh: Mesh) -> tuple[float, float, np.ndarray]:
    """``(h_max, h_min, areas)`` with h_K the longest edge of K."""
    h = mesh.cell_diameters()
    return float(h.max()), float(h.min()), mesh.signed_areas()


def write_vtk(path: str | Path, mesh: Mesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "thermoflow") -> Path:
    """Legacy ASCII VTK unstructured grid; vectors are padded to 3 components."""
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    m = mesh.num_cells
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m

    def block(kind, n, data):
        if not data:
            return
        lines.append(f"{kind} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in arr)
            else:
                if arr.shape[0] != n:
                    arr = arr.T
                pad = np.zeros((n, 3))
                pad[:, :arr.shape[1]] = arr
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in pad)

    block("POINT_DATA", mesh.num_vertices, point_data)
    block("CELL_DATA", m, cell_data)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_counts(path: str | Path) -> tuple[int, int]:
    """Minimal reader returning ``(num_points, num_cells)`` of a legacy VTK file."""
    npts = ncells = -1
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if tok and tok[0] == "POINTS":
            npts = int(tok[1])
        elif tok and tok[0] == "CELLS":
            ncells = int(tok[1])
    return npts, ncells
