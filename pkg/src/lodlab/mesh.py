"""Uniform triangulations of the unit square, nested hierarchies and patches.

Vertex ``(i, j)`` sits at ``(i/n, j/n)`` and has index ``j*(n+1) + i``.
Cell ``(i, j)`` is split along its lower-left to upper-right diagonal into
triangle ``2*(j*n + i)`` (below the diagonal) and ``2*(j*n + i) + 1``
(above it). Uniform refinement of this pattern reproduces it, so every
level of a hierarchy is nested in the coarser ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Triangulation:
    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex: np.ndarray

    @property
    def mesh_size(self) -> float:
        """Triangle diameter sqrt(2)/n."""
        return np.sqrt(2.0) / self.n

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def vertex_triangle(self) -> sp.csr_matrix:
        """Vertex x triangle incidence (0/1)."""
        nt = self.num_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return sp.csr_matrix((np.ones(3 * nt), (rows, cols)),
                             shape=(self.num_vertices, nt))

    def vertex_index(self, x: float, y: float) -> int:
        i, j = round(x * self.n), round(y * self.n)
        if not (np.isclose(i, x * self.n) and np.isclose(j, y * self.n)):
            raise MeshError(f"({x}, {y}) is not a vertex of the {self.n}x{self.n} mesh")
        if not (0 <= i <= self.n and 0 <= j <= self.n):
            raise MeshError(f"({x}, {y}) lies outside the unit square")
        return j * (self.n + 1) + i

    def check_conforming(self) -> bool:
        """Every edge is shared by two triangles, or by one on the boundary."""
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            return False
        single = uniq[counts == 1]
        on_bnd = self.boundary_vertex[single].all(axis=1)
        if not on_bnd.all():
            return False
        # both endpoints on the boundary but the edge cuts the interior
        mid = self.vertices[single].mean(axis=1)
        if not np.all((np.isclose(mid, 0) | np.isclose(mid, 1)).any(axis=1)):
            return False
        # Euler characteristic of a disc
        return self.num_vertices - len(uniq) + self.num_triangles == 1


def build_uniform(n: int) -> Triangulation:
    if int(n) != n or n < 1:
        raise MeshError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    idx = np.arange(n + 1)
    jj, ii = np.meshgrid(idx, idx, indexing="ij")
    vertices = np.column_stack([ii.ravel() / n, jj.ravel() / n])
    boundary = (ii.ravel() == 0) | (ii.ravel() == n) | (jj.ravel() == 0) | (jj.ravel() == n)

    cj, ci = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (cj * (n + 1) + ci).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Triangulation(n, vertices, triangles, boundary)


def parent_triangles(n_coarse: int, n_fine: int) -> np.ndarray:
    """Index of the coarse triangle containing each fine triangle."""
    if n_fine % n_coarse:
        raise MeshError(f"{n_coarse} does not divide {n_fine}")
    r = n_fine // n_coarse
    t = np.arange(2 * n_fine * n_fine)
    cell, s = t // 2, t % 2
    i, j = cell % n_fine, cell // n_fine
    li, lj = i % r, j % r
    side = np.where(li > lj, 0, np.where(li < lj, 1, s))
    return 2 * ((j // r) * n_coarse + i // r) + side


def child_triangles(n_coarse: int, n_fine: int) -> np.ndarray:
    """Array ``(coarse triangles, r*r)`` of fine children."""
    parent = parent_triangles(n_coarse, n_fine)
    r2 = (n_fine // n_coarse) ** 2
    order = np.argsort(parent, kind="stable")
    return order.reshape(-1, r2)


def prolongation_matrix(coarse: Triangulation, fine: Triangulation) -> sp.csr_matrix:
    """Nodal values of every coarse hat at every fine vertex."""
    nc, nf = coarse.n, fine.n
    r = nf // nc
    idx = np.arange(nf + 1)
    jj, ii = np.meshgrid(idx, idx, indexing="ij")
    i, j = ii.ravel(), jj.ravel()
    I = np.minimum(i // r, nc - 1)
    J = np.minimum(j // r, nc - 1)
    s = (i - I * r) / r
    t = (j - J * r) / r
    c00 = J * (nc + 1) + I
    c10, c01, c11 = c00 + 1, c00 + nc + 1, c00 + nc + 2
    low = s >= t
    cols = np.column_stack([c00, np.where(low, c10, c01), c11])
    vals = np.column_stack([np.where(low, 1 - s, 1 - t), np.where(low, s - t, t - s),
                            np.where(low, t, s)])
    rows = np.repeat(np.arange(len(i)), 3)
    P = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())),
                      shape=(fine.num_vertices, coarse.num_vertices))
    P.eliminate_zeros()
    P.sort_indices()
    return P


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    coarse: Triangulation
    eps_level: Triangulation
    fine: Triangulation
    child_map: np.ndarray
    prolongation: sp.csr_matrix

    @cached_property
    def eps_child_map(self) -> np.ndarray:
        return child_triangles(self.coarse.n, self.eps_level.n)

    @cached_property
    def fine_parent(self) -> np.ndarray:
        return parent_triangles(self.coarse.n, self.fine.n)

    @cached_property
    def coarse_interior(self) -> np.ndarray:
        return self.coarse.interior_vertices

    def fine_triangles_of(self, coarse_triangles) -> np.ndarray:
        return np.sort(self.child_map[np.asarray(coarse_triangles)].ravel())

    def fine_interior_vertices_of(self, coarse_triangles) -> np.ndarray:
        """Fine vertices strictly inside the union of the given coarse triangles
        and off the domain boundary."""
        mask = np.zeros(self.fine.num_triangles)
        mask[self.fine_triangles_of(coarse_triangles)] = 1.0
        inc = self.fine.vertex_triangle
        inside = inc @ mask
        degree = np.asarray(inc.sum(axis=1)).ravel()
        ok = (inside == degree) & ~self.fine.boundary_vertex
        return np.flatnonzero(ok)

    def fine_vertices_closure(self, coarse_triangles) -> np.ndarray:
        return np.unique(self.fine.triangles[self.fine_triangles_of(coarse_triangles)])


def build_hierarchy(n_H: int, n_eps: int, n_h: int) -> MeshHierarchy:
    for a, b in ((n_H, n_eps), (n_eps, n_h)):
        if a < 1 or b < 1 or b % a:
            raise MeshError(f"levels must be nested: {a} does not divide {b}")
    coarse = build_uniform(n_H)
    eps = build_uniform(n_eps)
    fine = build_uniform(n_h)
    return MeshHierarchy(coarse, eps, fine, child_triangles(n_H, n_h),
                         prolongation_matrix(coarse, fine))


@dataclass(frozen=True, eq=False)
class Patch:
    kind: str
    center: int
    order: int
    coarse_triangles: np.ndarray
    fine_vertices_interior: np.ndarray

    def __len__(self):
        return len(self.coarse_triangles)

    @property
    def key(self) -> tuple:
        return tuple(self.coarse_triangles.tolist())

    def touches_boundary(self, hier: MeshHierarchy) -> bool:
        verts = np.unique(hier.coarse.triangles[self.coarse_triangles])
        return bool(hier.coarse.boundary_vertex[verts].any())


def _grow(mesh: Triangulation, tris: np.ndarray, layers: int) -> np.ndarray:
    inc = mesh.vertex_triangle
    for _ in range(layers):
        mask = np.zeros(mesh.num_vertices)
        mask[mesh.triangles[tris].ravel()] = 1.0
        touched = inc.T @ mask
        new = np.flatnonzero(touched > 0)
        if len(new) == len(tris):
            break
        tris = new
    return np.asarray(tris, dtype=np.int64)


def _check_order(k):
    if int(k) != k or k < 1:
        raise MeshError(f"patch order must be a positive integer, got {k!r}")


def nodal_patch(hier: MeshHierarchy, z: int, k: int) -> Patch:
    """Order-k patch around the interior coarse vertex ``z``."""
    _check_order(k)
    mesh = hier.coarse
    if not 0 <= z < mesh.num_vertices:
        raise MeshError(f"coarse vertex {z} does not exist")
    if mesh.boundary_vertex[z]:
        raise MeshError(f"coarse vertex {z} lies on the boundary; correctors "
                        "are only formed for interior vertices")
    star = mesh.vertex_triangle[z].indices
    tris = _grow(mesh, np.sort(star), k - 1)
    return Patch("nodal", int(z), int(k), tris, hier.fine_interior_vertices_of(tris))


def element_patch(hier: MeshHierarchy, T: int, k: int) -> Patch:
    """Order-k patch around coarse triangle ``T`` (order 1 is T itself)."""
    _check_order(k)
    if not 0 <= T < hier.coarse.num_triangles:
        raise MeshError(f"coarse triangle {T} does not exist")
    tris = _grow(hier.coarse, np.array([T], dtype=np.int64), k - 1)
    return Patch("element", int(T), int(k), tris, hier.fine_interior_vertices_of(tris))


def element_neighborhood(hier: MeshHierarchy, T: int) -> Patch:
    """Union of the coarse triangles touching T."""
    return element_patch(hier, T, 2)
