"""Assembly of a(v, w) = (alpha grad v, grad w), N(v, w) = (beta . grad v + gamma v, w)
and load vectors for P1 spaces.

Coefficient callbacks are vectorized: they receive an (n, 2) array of points
and return (n, 2, 2), (n, 2) or (n,) arrays.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteValue, NonSpdCoefficient
from .fem import FeSpace
from .quadrature import QuadratureRule, composite_rule, triangle_rule

__all__ = [
    "CoefficientField",
    "constant_matrix",
    "constant_vector",
    "constant_scalar",
    "assemble_a",
    "assemble_N",
    "assemble_load",
    "corner_elements",
    "BILINEAR_DEGREE",
    "LOAD_DEGREE",
    "CORNER_SUBDIV",
]

BILINEAR_DEGREE = 4
LOAD_DEGREE = 7
CORNER_SUBDIV = 8


def constant_matrix(m):
    m = np.asarray(m, dtype=float)
    return lambda x: np.broadcast_to(m, (len(x), 2, 2))


def constant_vector(v):
    v = np.asarray(v, dtype=float)
    return lambda x: np.broadcast_to(v, (len(x), 2))


def constant_scalar(c):
    c = float(c)
    return lambda x: np.full(len(x), c)


def _zero(x):
    return np.zeros(len(x))


@dataclass(frozen=True)
class CoefficientField:
    """Data of -div(alpha grad u) + beta . grad u + gamma u = f, u = g on the boundary.

    ``alpha_constant`` declares alpha spatially constant, which lets the
    estimator drop the div(alpha) term exactly.
    """

    alpha: Callable = field(default_factory=lambda: constant_matrix(np.eye(2)))
    beta: Callable = field(default_factory=lambda: constant_vector((0.0, 0.0)))
    gamma: Callable = field(default_factory=lambda: constant_scalar(0.0))
    f: Callable = _zero
    g: Callable = _zero
    alpha_constant: bool = True
    singular_corners: Sequence = ()


def _threads(threads):
    if threads is None:
        threads = int(os.environ.get("CATGFEM_THREADS", "1") or 1)
    return max(1, threads)


def _scatter(space, local, threads):
    """Sum (M, 3, 3) element matrices into a CSR matrix on the space's pattern."""
    indptr, indices, pos = space.pattern
    nnz = len(indices)
    n_el = len(local)
    threads = _threads(threads)
    if threads == 1 or n_el < 2 * threads:
        data = np.bincount(pos.ravel(), weights=local.ravel(), minlength=nnz)
    else:
        bounds = np.linspace(0, n_el, threads + 1).astype(int)

        def chunk(i):
            s = slice(bounds[i], bounds[i + 1])
            return np.bincount(pos[s].ravel(), weights=local[s].ravel(), minlength=nnz)

        with ThreadPoolExecutor(threads) as pool:
            data = sum(pool.map(chunk, range(threads)))
    n = space.n_dofs
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))


def _check_spd(alpha):
    a11, a12, a21, a22 = alpha[:, 0, 0], alpha[:, 0, 1], alpha[:, 1, 0], alpha[:, 1, 1]
    if not np.allclose(a12, a21, rtol=1e-12, atol=0.0):
        raise NonSpdCoefficient("alpha is not symmetric at a quadrature point")
    if np.any(a11 <= 0) or np.any(a11 * a22 - a12 * a21 <= 0):
        raise NonSpdCoefficient("alpha has a non-positive eigenvalue at a quadrature point")


def assemble_a(space: FeSpace, coeff: CoefficientField, quad: QuadratureRule | None = None,
               threads=None):
    """Stiffness matrix of a(v, w) = (alpha grad v, grad w).

    The local (i, j) and (j, i) entries are the same float, so the assembled
    matrix is exactly symmetric.
    """
    quad = quad or triangle_rule(BILINEAR_DEGREE)
    pts = quad.physical_points(space.corners)  # (M, q, 2)
    m, q = pts.shape[:2]
    alpha = np.asarray(coeff.alpha(pts.reshape(-1, 2)), dtype=float).reshape(m, q, 2, 2)
    _check_spd(alpha.reshape(-1, 2, 2))
    abar = np.einsum("q,mqij->mij", quad.weights, alpha)
    G = space.gradients
    local = np.einsum("mid,mde,mje->mij", G, abar, G) * space.mesh.areas[:, None, None]
    iu, ju = np.triu_indices(3, 1)
    local[:, ju, iu] = local[:, iu, ju]
    return _scatter(space, local, threads)


def assemble_N(space: FeSpace, coeff: CoefficientField, quad: QuadratureRule | None = None,
               threads=None):
    """Matrix of N(phi_j, phi_i) = (beta . grad phi_j + gamma phi_j, phi_i).

    Shares the sparsity pattern of :func:`assemble_a`.
    """
    quad = quad or triangle_rule(BILINEAR_DEGREE)
    pts = quad.physical_points(space.corners)
    m, q = pts.shape[:2]
    flat = pts.reshape(-1, 2)
    beta = np.asarray(coeff.beta(flat), dtype=float).reshape(m, q, 2)
    gamma = np.asarray(coeff.gamma(flat), dtype=float).reshape(m, q)
    lam = quad.points  # (q, 3) hat values at the quadrature points
    G = space.gradients
    # convection: sum_q w_q (beta_q . grad phi_j) phi_i(x_q)
    bgrad = np.einsum("mqd,mjd->mqj", beta, G)
    conv = np.einsum("q,qi,mqj->mij", quad.weights, lam, bgrad)
    react = np.einsum("q,mq,qi,qj->mij", quad.weights, gamma, lam, lam)
    local = (conv + react) * space.mesh.areas[:, None, None]
    return _scatter(space, local, threads)


def corner_elements(space: FeSpace, corners, atol=1e-14):
    """Map element index -> local vertex index touching a singular corner."""
    out = {}
    if corners is None or len(corners) == 0:
        return out
    verts = space.mesh.vertices
    tris = space.mesh.triangles
    for c in np.atleast_2d(np.asarray(corners, dtype=float)):
        hit = np.flatnonzero(np.linalg.norm(verts - c, axis=1) <= atol)
        if not len(hit):
            continue
        el, loc = np.nonzero(tris == hit[0])
        for e, l in zip(el.tolist(), loc.tolist()):
            out[e] = l
    return out


def element_quadrature(space: FeSpace, quad: QuadratureRule, corners=(), corner_subdiv=CORNER_SUBDIV):
    """Quadrature for every element, with composite rules at singular corners.

    Returns ``(elem, pts, wts, bary)``: flat arrays where ``elem`` names the
    element owning each point, ``wts`` are absolute weights and ``bary`` the
    barycentric coordinates inside that element.
    """
    m = space.mesh.n_triangles
    q = len(quad)
    special = corner_elements(space, corners) if corner_subdiv > 0 else {}
    regular = np.ones(m, dtype=bool)
    regular[list(special)] = False
    reg = np.flatnonzero(regular)
    pts = quad.physical_points(space.corners[reg]).reshape(-1, 2)
    wts = (space.mesh.areas[reg, None] * quad.weights[None, :]).ravel()
    bary = np.tile(quad.points, (len(reg), 1))
    elem = np.repeat(reg, q)
    if special:
        parts = [(elem, pts, wts, bary)]
        for e, loc in sorted(special.items()):
            p, w, b = composite_rule(space.corners[e], loc, corner_subdiv, quad)
            parts.append((np.full(len(w), e), p, w, b))
        elem, pts, wts, bary = (np.concatenate(z) for z in zip(*parts))
    return elem, pts, wts, bary


def assemble_load(space: FeSpace, coeff: CoefficientField, quad: QuadratureRule | None = None,
                  corner_subdiv: int = CORNER_SUBDIV, fn=None):
    """Load vector F_i = sum_T int_T f phi_i.

    Elements touching one of ``coeff.singular_corners`` are integrated with a
    composite rule graded toward the corner over ``corner_subdiv`` levels.
    ``fn`` overrides ``coeff.f``.
    """
    quad = quad or triangle_rule(LOAD_DEGREE)
    fn = coeff.f if fn is None else fn
    elem, pts, wts, bary = element_quadrature(space, quad, coeff.singular_corners, corner_subdiv)
    fv = np.asarray(fn(pts), dtype=float)
    fv = np.broadcast_to(fv, (len(pts),))
    if not np.all(np.isfinite(fv)):
        bad = pts[np.flatnonzero(~np.isfinite(fv))[0]]
        raise NonFiniteValue(f"f is not finite at quadrature point {bad}")
    contrib = (wts * fv)[:, None] * bary
    dofs = space.mesh.triangles[elem]
    return np.bincount(dofs.ravel(), weights=contrib.ravel(), minlength=space.n_dofs)
