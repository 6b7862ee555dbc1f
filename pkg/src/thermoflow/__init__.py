"""Steady anisothermal non-Newtonian flow solvers on triangular meshes."""

__version__ = "0.1.0"
