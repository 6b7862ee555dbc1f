"""Lagrange elements on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FAMILIES = ("CG", "DG")
SHAPES = {"scalar": 1, "vector": 2, "symmetric": 3, "traceless": 2}


@dataclass(frozen=True)
class ElementSpec:
    """Element family, polynomial degree and value shape.

    Symmetric tensors are stored as Voigt components ``(A11, A22, A12)``;
    traceless tensors keep ``(A11, A12)`` with ``A22 = -A11``.
    """

    family: str
    degree: int
    shape: str = "scalar"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.degree < 0 or (self.family == "CG" and self.degree < 1):
            raise ValueError("continuous elements need degree >= 1")

    @property
    def ncomp(self) -> int:
        return SHAPES[self.shape]

    @property
    def nloc(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2


def CG(k, shape="scalar"):
    return ElementSpec("CG", k, shape)


def DG(k, shape="scalar"):
    return ElementSpec("DG", k, shape)


# local edge i is opposite vertex i, traversed first -> second
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@lru_cache(maxsize=None)
def reference_nodes(k: int) -> np.ndarray:
    """Equispaced nodes ordered vertices, edge nodes (per local edge), interior."""
    if k == 0:
        return np.array([[1 / 3, 1 / 3]])
    nodes = [v for v in _REF_VERTS]
    for a, b in LOCAL_EDGES:
        for j in range(1, k):
            nodes.append(_REF_VERTS[a] + (j / k) * (_REF_VERTS[b] - _REF_VERTS[a]))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append(np.array([i / k, j / k]))
    return np.array(nodes)


def _monomials(k):
    return [(a, n - a) for n in range(k + 1) for a in range(n, -1, -1)]


@lru_cache(maxsize=None)
def _coefficients(k: int) -> np.ndarray:
    nodes = reference_nodes(k)
    V = np.array([[x ** a * y ** b for a, b in _monomials(k)] for x, y in nodes])
    return np.linalg.inv(V)  # column j: monomial coefficients of basis j


def reference_basis(k: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate degree-``k`` scalar Lagrange basis at reference points.

    Returns values ``(nq, nloc)`` and reference gradients ``(nq, nloc, 2)``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x, y = xi[:, 0], xi[:, 1]
    mons = _monomials(k)
    C = _coefficients(k)
    P = np.stack([x ** a * y ** b for a, b in mons], axis=1)
    Px = np.stack([a * x ** max(a - 1, 0) * y ** b for a, b in mons], axis=1)
    Py = np.stack([b * x ** a * y ** max(b - 1, 0) for a, b in mons], axis=1)
    return P @ C, np.stack([Px @ C, Py @ C], axis=-1)


def tabulate(elem: ElementSpec, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise tabulation of ``elem``.

    Returns ``(ncomp, nq, ncomp*nloc)`` values and ``(ncomp, nq, ncomp*nloc, 2)``
    reference gradients; local dof ``c*nloc + a`` is basis ``a`` in component ``c``.
    """
    phi, dphi = reference_basis(elem.degree, xi)
    nc, nl = elem.ncomp, elem.nloc
    nq = phi.shape[0]
    val = np.zeros((nc, nq, nc * nl))
    grad = np.zeros((nc, nq, nc * nl, 2))
    for c in range(nc):
        val[c, :, c * nl:(c + 1) * nl] = phi
        grad[c, :, c * nl:(c + 1) * nl] = dphi
    return val, grad
