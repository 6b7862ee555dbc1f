"""Quadrature on the reference triangle and the unit interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights summing to 1/2."""

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def xi(self) -> np.ndarray:
        """Reference coordinates (nq, 2) on the triangle (0,0),(1,0),(0,1)."""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    pts = [(a, a, b), (a, b, a), (b, a, a)]
    return pts, [w] * 3


# Symmetric rules (weights normalised to unit area, scaled below).
def _sym_rule(degree):
    if degree <= 1:
        return [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    if degree == 2:
        return _orbit3(1 / 6, 1 / 3)
    if degree <= 4:
        p1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
        p2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
        return p1 + p2, w1 + w2
    p1, w1 = _orbit3(0.470142064105115, 0.132394152788506)
    p2, w2 = _orbit3(0.101286507323456, 0.125939180544827)
    return [(1 / 3, 1 / 3, 1 / 3)] + p1 + p2, [0.225] + w1 + w2


def _conical_rule(degree):
    # Collapsed Gauss-Jacobi product, exact for total degree <= 2n - 1.
    n = degree // 2 + 1
    xa, wa = roots_jacobi(n, 1.0, 0.0)
    xb, wb = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xa + 1.0)  # collapsed direction, weight (1 - s)
    t = 0.5 * (xb + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    x = S
    y = (1.0 - S) * T
    W = np.outer(wa / 4.0, wb / 2.0) * 2.0  # unit-area normalisation
    pts = np.column_stack([1.0 - x.ravel() - y.ravel(), x.ravel(), y.ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree ``<= degree`` (1..20).

    Degrees up to 5 use fully symmetric rules with positive weights; higher
    degrees use a collapsed Gauss-Jacobi product rule.
    """
    degree = int(degree)
    if not 1 <= degree <= 20:
        raise ValueError(f"unsupported quadrature degree {degree}")
    if degree <= 5:
        pts, w = _sym_rule(degree)
        pts, w = np.array(pts, dtype=float), np.array(w, dtype=float)
    else:
        pts, w = _conical_rule(degree)
    return QuadratureRule(pts, 0.5 * w, degree)


@lru_cache(maxsize=None)
def gauss_line(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points in [0, 1] and weights summing to 1."""
    n = max(1, (int(degree) + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
