"""Conforming triangle meshes refined by newest-vertex bisection.

Convention: local vertex 0 of every triangle is its newest vertex and the
refinement edge is the edge opposite to it. Local edge ``i`` is always the
edge opposite local vertex ``i``. Triangles are stored counterclockwise.

Vertices are append-only across refinement, so a vertex index means the same
point on every mesh of a refinement history. This is what makes prolongation
between levels a pure bookkeeping exercise (see :mod:`catgfem.fem`).
"""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np

from .errors import ClosureNonTermination

__all__ = [
    "Mesh",
    "generate_unit_square",
    "generate_lshape",
    "bisect",
    "uniform_refine",
    "dump_mesh",
    "load_mesh",
]

# Max closure sweeps; one sweep advances every pending chain by one element.
CLOSURE_SWEEP_CAP = 256

_uid_counter = itertools.count()


def _edge_table(triangles):
    """Unique edges and the element-to-edge map (edge i opposite vertex i)."""
    local = triangles[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2)
    local = np.sort(local, axis=1)
    edges, inverse = np.unique(local, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


class Mesh:
    """Immutable conforming triangulation with refinement history.

    Parameters
    ----------
    vertices : (N, 2) array
    triangles : (M, 3) int array, newest vertex first, counterclockwise.
    boundary_edges : (B, 2) int array of Dirichlet edges (sorted pairs).
    generation : refinement level of this mesh.
    parent : (M,) index of the containing triangle at the previous
        generation, -1 on the initial mesh.
    vertex_parents : (N, 2) endpoints of the edge each vertex bisected, -1
        for vertices of the initial mesh. Cumulative over the whole history.
    vertex_generation : (N,) generation at which each vertex appeared.
    """

    def __init__(self, vertices, triangles, boundary_edges, generation=0,
                 parent=None, vertex_parents=None, vertex_generation=None,
                 lineage=()):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.sort(np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2), axis=1)
        self.generation = int(generation)
        n, m = len(self.vertices), len(self.triangles)
        self.parent = (np.full(m, -1, dtype=np.int64) if parent is None
                       else np.asarray(parent, dtype=np.int64))
        self.vertex_parents = (np.full((n, 2), -1, dtype=np.int64) if vertex_parents is None
                               else np.asarray(vertex_parents, dtype=np.int64))
        self.vertex_generation = (np.zeros(n, dtype=np.int64) if vertex_generation is None
                                  else np.asarray(vertex_generation, dtype=np.int64))
        self.uid = next(_uid_counter)
        # uids of all ancestors, oldest first
        self.lineage = tuple(lineage)
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.parent,
                    self.vertex_parents, self.vertex_generation):
            arr.flags.writeable = False

    @classmethod
    def from_triangles(cls, vertices, triangles):
        """Initial mesh whose Dirichlet edges are all topological boundary edges."""
        edges, elem2edge = _edge_table(np.asarray(triangles, dtype=np.int64))
        counts = np.bincount(elem2edge.ravel(), minlength=len(edges))
        return cls(vertices, triangles, edges[counts == 1])

    def __repr__(self):
        return (f"Mesh(generation={self.generation}, n_vertices={self.n_vertices}, "
                f"n_triangles={self.n_triangles})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def refinement_edge(self):
        """Local index of each triangle's refinement edge (always 0 here)."""
        return np.zeros(self.n_triangles, dtype=np.int64)

    @property
    def edge_midpoint_map(self):
        """Vertices created by the bisection that produced this mesh.

        Returns a dict ``{new_vertex: (parent_a, parent_b)}``.
        """
        new = np.flatnonzero((self.vertex_generation == self.generation) & (self.vertex_parents[:, 0] >= 0))
        return {int(v): (int(self.vertex_parents[v, 0]), int(self.vertex_parents[v, 1])) for v in new}

    @cached_property
    def _edges(self):
        return _edge_table(self.triangles)

    @property
    def edges(self):
        """(E, 2) sorted vertex pairs of all edges."""
        return self._edges[0]

    @property
    def elem_to_edge(self):
        """(M, 3) global edge index of local edge i (opposite vertex i)."""
        return self._edges[1]

    @cached_property
    def edge_to_elem(self):
        """(E, 2) adjacent triangles per edge; second entry -1 on the boundary."""
        e2e = np.full((len(self.edges), 2), -1, dtype=np.int64)
        flat = self.elem_to_edge.ravel()
        owner = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(flat, kind="stable")
        flat, owner = flat[order], owner[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        e2e[flat[first], 0] = owner[first]
        e2e[flat[~first], 1] = owner[~first]
        return e2e

    @cached_property
    def boundary_edge_mask(self):
        """(E,) True for edges flagged Dirichlet."""
        mask = np.zeros(len(self.edges), dtype=bool)
        if len(self.boundary_edges) == 0:
            return mask
        # edges are lexicographically sorted, so the packed keys are too
        key_all = self.edges[:, 0] * self.n_vertices + self.edges[:, 1]
        key_bd = self.boundary_edges[:, 0] * self.n_vertices + self.boundary_edges[:, 1]
        pos = np.searchsorted(key_all, key_bd)
        mask[pos] = True
        return mask

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def diameters(self):
        """Longest edge length per triangle."""
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
        return lens.max(axis=1)

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def is_conforming(self) -> bool:
        """Every edge has one or two triangles and single-triangle edges lie on the boundary.

        Hanging nodes show up as edges owned by one triangle that are not
        Dirichlet boundary edges.
        """
        counts = np.bincount(self.elem_to_edge.ravel(), minlength=len(self.edges))
        if counts.max(initial=0) > 2:
            return False
        return bool(np.array_equal(counts == 1, self.boundary_edge_mask))

    def is_descendant_of(self, other: "Mesh") -> bool:
        return other.uid == self.uid or other.uid in self.lineage


def _grid_mesh(n, x0, y0, n_cells, keep):
    """Triangulate an n_cells x n_cells square grid with spacing 1/n.

    Each kept square (i, j) is cut along its p00-p11 diagonal, which becomes
    the refinement edge of both halves (a compatible labeling).
    """
    h = 1.0 / n
    nx = n_cells + 1
    idx = np.arange(nx * nx).reshape(nx, nx)  # idx[j, i]
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(nx)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n_cells):
        for i in range(n_cells):
            if not keep(i, j):
                continue
            p00, p10 = idx[j, i], idx[j, i + 1]
            p01, p11 = idx[j + 1, i], idx[j + 1, i + 1]
            tris.append((p10, p11, p00))
            tris.append((p01, p00, p11))
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = np.full(nx * nx, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    # exact grid coordinates: snap values like -1 + 10*0.1 to 0
    verts = np.round(verts[used] * n) / n
    return Mesh.from_triangles(verts, remap[tris])


def generate_unit_square(n: int) -> Mesh:
    """Uniform n x n triangulation of (0, 1)^2, h0 = 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _grid_mesh(n, 0.0, 0.0, n, lambda i, j: True)


def generate_lshape(n: int) -> Mesh:
    """Triangulation of (-1, 1)^2 minus [0, 1) x (-1, 0] with h0 = 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    # square (i, j) lies in x>0, y<0 when i >= n and j < n
    return _grid_mesh(n, -1.0, -1.0, 2 * n, lambda i, j: not (i >= n and j < n))


def bisect(mesh: Mesh, marked) -> Mesh:
    """Refine ``mesh`` by newest-vertex bisection of the marked triangles.

    Every marked triangle is cut once through its refinement edge. Further
    bisections are applied where needed to remove hanging nodes, so a
    triangle can end up split into up to four pieces. The result is a new
    mesh one generation deeper; ``parent`` maps each new triangle to the
    triangle of ``mesh`` containing it.
    """
    marked = np.asarray(marked)
    if marked.dtype == bool:
        marked = np.flatnonzero(marked)
    marked = marked.astype(np.int64, copy=False)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise IndexError("marked triangle index out of range")

    tris = mesh.triangles
    elem2edge = mesh.elem_to_edge
    edges = mesh.edges
    ref_edge = elem2edge[:, 0]

    edge_marked = np.zeros(len(edges), dtype=bool)
    edge_marked[ref_edge[marked]] = True
    for _ in range(CLOSURE_SWEEP_CAP):
        pending = edge_marked[elem2edge].any(axis=1) & ~edge_marked[ref_edge]
        if not pending.any():
            break
        edge_marked[ref_edge[pending]] = True
    else:
        raise ClosureNonTermination(
            f"closure did not terminate within {CLOSURE_SWEEP_CAP} sweeps")

    nv = mesh.n_vertices
    split = np.flatnonzero(edge_marked)
    midpoint = np.full(len(edges), -1, dtype=np.int64)
    midpoint[split] = nv + np.arange(len(split))
    a = mesh.vertices[edges[split, 0]]
    b = mesh.vertices[edges[split, 1]]
    vertices = np.vstack([mesh.vertices, (a + b) / 2])
    vertex_parents = np.vstack([mesh.vertex_parents, edges[split]])
    gen = mesh.generation + 1
    vertex_generation = np.concatenate([mesh.vertex_generation, np.full(len(split), gen, dtype=np.int64)])

    m = mesh.n_triangles
    cut = edge_marked[ref_edge]
    cut1 = cut & edge_marked[elem2edge[:, 2]]  # child [m, v0, v1] cut along (v0, v1)
    cut2 = cut & edge_marked[elem2edge[:, 1]]  # child [m, v2, v0] cut along (v2, v0)

    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    mid = midpoint[ref_edge]
    m1 = midpoint[elem2edge[:, 2]]
    m2 = midpoint[elem2edge[:, 1]]

    # (owner, slot, triangle) triples; slot orders children within a parent
    pieces = []
    keep = ~cut
    pieces.append((np.flatnonzero(keep), 0, tris[keep]))
    sel = cut & ~cut1
    pieces.append((np.flatnonzero(sel), 0, np.column_stack([mid, v0, v1])[sel]))
    sel = cut1
    pieces.append((np.flatnonzero(sel), 0, np.column_stack([m1, mid, v0])[sel]))
    pieces.append((np.flatnonzero(sel), 1, np.column_stack([m1, v1, mid])[sel]))
    sel = cut & ~cut2
    pieces.append((np.flatnonzero(sel), 2, np.column_stack([mid, v2, v0])[sel]))
    sel = cut2
    pieces.append((np.flatnonzero(sel), 2, np.column_stack([m2, mid, v2])[sel]))
    pieces.append((np.flatnonzero(sel), 3, np.column_stack([m2, v0, mid])[sel]))

    owner = np.concatenate([p[0] for p in pieces])
    slot = np.concatenate([np.full(len(p[0]), p[1]) for p in pieces])
    new_tris = np.vstack([p[2] for p in pieces])
    order = np.lexsort((slot, owner))

    bd = mesh.boundary_edges
    if len(bd):
        bd_idx = np.flatnonzero(mesh.boundary_edge_mask)
        bd_split = edge_marked[bd_idx]
        whole = edges[bd_idx[~bd_split]]
        halves_a = np.column_stack([edges[bd_idx[bd_split], 0], midpoint[bd_idx[bd_split]]])
        halves_b = np.column_stack([midpoint[bd_idx[bd_split]], edges[bd_idx[bd_split], 1]])
        bd = np.vstack([whole, halves_a, halves_b])

    return Mesh(vertices, new_tris[order], bd, generation=gen, parent=owner[order],
                vertex_parents=vertex_parents, vertex_generation=vertex_generation,
                lineage=mesh.lineage + (mesh.uid,))


def uniform_refine(mesh: Mesh, rounds: int) -> Mesh:
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    for _ in range(rounds):
        mesh = bisect(mesh, np.arange(mesh.n_triangles))
    return mesh


def dump_mesh(mesh: Mesh, fh) -> None:
    """Write ``v x y`` and ``t i j k r b0 b1 b2`` records to a text stream."""
    for x, y in mesh.vertices.tolist():
        fh.write(f"v {x!r} {y!r}\n")
    bd = mesh.boundary_edge_mask[mesh.elem_to_edge].astype(int)
    for (i, j, k), b in zip(mesh.triangles.tolist(), bd.tolist()):
        fh.write(f"t {i} {j} {k} 0 {b[0]} {b[1]} {b[2]}\n")


def load_mesh(fh) -> Mesh:
    """Read the text dump format back into an initial (generation 0) mesh.

    Triangles are rotated so the refinement edge is local edge 0.
    """
    verts, tris, bd = [], [], []
    for lineno, line in enumerate(fh, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "t":
            ijk = [int(p) for p in parts[1:4]]
            r = int(parts[4])
            flags = [int(p) for p in parts[5:8]]
            ijk = ijk[r:] + ijk[:r]
            flags = flags[r:] + flags[:r]
            tris.append(ijk)
            for loc in range(3):
                if flags[loc]:
                    bd.append((ijk[(loc + 1) % 3], ijk[(loc + 2) % 3]))
        else:
            raise ValueError(f"line {lineno}: unknown record {parts[0]!r}")
    bd = np.unique(np.sort(np.array(bd, dtype=np.int64).reshape(-1, 2), axis=1), axis=0)
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64), bd)
