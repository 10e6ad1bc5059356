"""Quadrature on triangles and edges.

Triangle rules use barycentric points and weights normalized to sum to one,
so ``area * sum(w * f(x))`` integrates over a physical triangle.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (q, 3) barycentric
    weights: np.ndarray  # (q,), sum to 1
    degree: int

    def __len__(self):
        return len(self.weights)

    def physical_points(self, corners):
        """Map to physical points; ``corners`` is (M, 3, 2). Returns (M, q, 2)."""
        return np.einsum("qi,mid->mqd", self.points, corners)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


@lru_cache(maxsize=None)
def _centroid():
    return QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)


@lru_cache(maxsize=None)
def _strang_fix_3():
    pts, wts = _orbit3(1 / 6, 1 / 3)
    return QuadratureRule(np.array(pts), np.array(wts), 2)


@lru_cache(maxsize=None)
def _dunavant_6():
    p1, w1 = _orbit3(0.445948490915964886, 0.223381589678011466)
    p2, w2 = _orbit3(0.091576213509770743, 0.109951743655321868)
    return QuadratureRule(np.array(p1 + p2), np.array(w1 + w2), 4)


@lru_cache(maxsize=None)
def collapsed_gauss(n: int) -> QuadratureRule:
    """Conical product rule with n x n points, exact to degree 2n - 1.

    Gauss-Jacobi in the collapsed direction absorbs the Duffy Jacobian.
    All weights are positive and all points are interior.
    """
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(n)
    s = (1.0 + xj) / 2.0
    t = (1.0 + xl) / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wj, wl)
    xi = S.ravel()
    eta = ((1.0 - S) * T).ravel()
    w = W.ravel()
    w = w / w.sum()
    pts = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(pts, w, 2 * n - 1)


def triangle_rule(degree: int) -> QuadratureRule:
    """Smallest shipped rule of at least the requested degree."""
    if degree <= 1:
        return _centroid()
    if degree == 2:
        return _strang_fix_3()
    if degree <= 4:
        return _dunavant_6()
    return collapsed_gauss((degree + 2) // 2)


@lru_cache(maxsize=None)
def gauss_legendre(n: int = 4):
    """Points in [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def subdivide_toward_corner(tri, corner, levels):
    """Split a triangle geometrically toward one of its vertices.

    ``tri`` is (3, 2) and ``corner`` the local index of the singular vertex.
    Each level cuts the triangle into four halves-scaled copies and recurses
    into the one at the corner, so the innermost piece has diameter
    ``2**-levels`` times the original. Returns a list of (3, 2) sub-triangles
    that tile ``tri``.
    """
    c = tri[corner]
    a = tri[(corner + 1) % 3]
    b = tri[(corner + 2) % 3]
    pieces = []
    for _ in range(levels):
        ca, cb, ab = (c + a) / 2, (c + b) / 2, (a + b) / 2
        pieces += [np.array([ca, a, ab]), np.array([cb, ab, b]), np.array([ca, ab, cb])]
        a, b = ca, cb
    pieces.append(np.array([c, a, b]))
    return pieces


def composite_rule(tri, corner, levels, rule):
    """Quadrature on ``tri`` refined toward ``corner``.

    Returns physical points (q, 2), absolute weights (q,) summing to the
    triangle area and barycentric coordinates (q, 3) w.r.t. ``tri``.
    """
    pieces = np.array(subdivide_toward_corner(tri, corner, levels))
    d1 = pieces[:, 1] - pieces[:, 0]
    d2 = pieces[:, 2] - pieces[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = rule.physical_points(pieces).reshape(-1, 2)
    wts = (area[:, None] * rule.weights[None, :]).ravel()
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    lam12 = np.linalg.solve(T, (pts - tri[0]).T).T
    bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
    return pts, wts, bary
