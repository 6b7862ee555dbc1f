"""Lagrange finite elements on triangles."""
from .assembly import (CellContext, FacetContext, assemble, cellwise_inverse,
                       divergence_matrix, mass_matrix, stiffness_matrix)
from .bc import apply_dirichlet, eliminate, error_norm, write_matrix_market
from .element import CG, DG, ElementSpec, reference_basis, tabulate
from .quadrature import QuadratureRule, gauss_line, quadrature_rule
from .space import FieldLayout, FunctionSpace, Geometry

__all__ = [
    "CellContext", "FacetContext", "assemble", "cellwise_inverse", "divergence_matrix",
    "mass_matrix", "stiffness_matrix", "apply_dirichlet", "eliminate", "error_norm",
    "write_matrix_market", "CG", "DG", "ElementSpec", "reference_basis", "tabulate",
    "QuadratureRule", "gauss_line", "quadrature_rule", "FieldLayout", "FunctionSpace",
    "Geometry",
]
