"""P1 Lagrange spaces, nodal interpolation and prolongation between nested meshes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteValue, NotNested
from .mesh import Mesh

__all__ = ["FeSpace", "FeFunction", "build_space", "prolongation", "interpolate", "evaluate"]


class FeSpace:
    """Continuous piecewise-linear functions on ``mesh``; one DOF per vertex.

    DOF ``i`` is vertex ``i``. Dirichlet DOFs are the endpoints of the mesh's
    Dirichlet edges.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.n_dofs = mesh.n_vertices
        self.dirichlet_dofs = np.unique(mesh.boundary_edges)
        is_free = np.ones(self.n_dofs, dtype=bool)
        is_free[self.dirichlet_dofs] = False
        self.free_dofs = np.flatnonzero(is_free)
        self.is_free = is_free

    def __repr__(self):
        return f"FeSpace(n_dofs={self.n_dofs}, n_free={len(self.free_dofs)})"

    @cached_property
    def gradients(self):
        """(M, 3, 2) constant gradients of the three local hat functions."""
        p = self.mesh.vertices[self.mesh.triangles]
        # grad(lambda_i) = rot90(edge opposite i) / (2 * signed area)
        e = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
        rot = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return rot / (2.0 * self.mesh.signed_areas[:, None, None])

    @cached_property
    def corners(self):
        """(M, 3, 2) vertex coordinates per element."""
        return self.mesh.vertices[self.mesh.triangles]

    @cached_property
    def pattern(self):
        """CSR sparsity of the P1 coupling graph plus per-element scatter positions.

        Returns ``(indptr, indices, positions)`` where ``positions[t, i, j]``
        is the slot in the CSR data array receiving the (i, j) local entry of
        element ``t``.
        """
        tris = self.mesh.triangles
        n = self.n_dofs
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        keys = rows * n + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        r = uniq // n
        indices = (uniq % n).astype(np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        indptr = np.cumsum(indptr)
        return indptr, indices, inverse.reshape(-1, 3, 3)

    def zero(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.n_dofs))


@dataclass
class FeFunction:
    """Nodal coefficient vector of a P1 function on ``space``."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.coeffs.shape}")

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coeffs.copy())

    def gradients(self):
        """(M, 2) elementwise constant gradient."""
        return np.einsum("mi,mid->md", self.coeffs[self.space.mesh.triangles], self.space.gradients)


def build_space(mesh: Mesh) -> FeSpace:
    return FeSpace(mesh)


def _one_step(n_coarse, n_fine, vertex_parents):
    """Prolongation adding the vertices ``n_coarse..n_fine-1`` (parents all older)."""
    new = np.arange(n_coarse, n_fine)
    par = vertex_parents[new]
    rows = np.concatenate([np.arange(n_coarse), np.repeat(new, 2)])
    cols = np.concatenate([np.arange(n_coarse), par.ravel()])
    vals = np.concatenate([np.ones(n_coarse), np.full(2 * len(new), 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


def prolongation(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    """Matrix mapping coarse nodal values to the same function's fine nodal values.

    Composed generation by generation from the vertex-parent records, so
    every factor has rows with either a single 1 or two entries of 1/2.
    """
    cm, fm = coarse.mesh, fine.mesh
    if not fm.is_descendant_of(cm):
        raise NotNested(f"{fm!r} does not descend from {cm!r}")
    P = sp.identity(coarse.n_dofs, format="csr")
    # vertices of one generation only bisect edges of the previous mesh
    n = coarse.n_dofs
    for gen in range(cm.generation + 1, fm.generation + 1):
        n_next = n + int(np.count_nonzero(fm.vertex_generation == gen))
        if n_next > n:
            P = _one_step(n, n_next, fm.vertex_parents) @ P
        n = n_next
    if n != fine.n_dofs:
        raise NotNested("vertex counts do not match the refinement history")
    P.sum_duplicates()
    P.sort_indices()
    return P.tocsr()


def interpolate(space: FeSpace, g) -> FeFunction:
    """Nodal interpolant of ``g``; ``g`` maps an (n, 2) array to (n,) values."""
    vals = np.asarray(g(space.mesh.vertices), dtype=float)
    vals = np.broadcast_to(vals, (space.n_dofs,)).copy()
    if not np.all(np.isfinite(vals)):
        bad = np.flatnonzero(~np.isfinite(vals))[0]
        raise NonFiniteValue(f"g is not finite at vertex {bad} {space.mesh.vertices[bad]}")
    return FeFunction(space, vals)


def barycentric_locate(mesh: Mesh, points, tol=1e-12):
    """Containing triangle and barycentric coordinates by brute force.

    Meant for tests and diagnostics; cost is O(points x triangles).
    """
    points = np.atleast_2d(points)
    p = mesh.vertices[mesh.triangles]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (M, 2, 2)
    Tinv = np.linalg.inv(T)
    owner = np.full(len(points), -1, dtype=np.int64)
    bary = np.zeros((len(points), 3))
    for k, x in enumerate(points):
        lam = np.einsum("mij,mj->mi", Tinv, x - p[:, 0])
        full = np.column_stack([1.0 - lam.sum(axis=1), lam])
        score = full.min(axis=1)
        t = int(np.argmax(score))
        if score[t] < -tol:
            raise ValueError(f"point {x} is outside the mesh")
        owner[k] = t
        bary[k] = full[t]
    return owner, bary


def evaluate(u: FeFunction, points):
    """Point values of a P1 function."""
    owner, bary = barycentric_locate(u.space.mesh, points)
    return np.einsum("ki,ki->k", u.coeffs[u.space.mesh.triangles[owner]], bary)
