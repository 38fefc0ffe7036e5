"""P1 finite elements on a ``Triangulation``: assembly, reference solves, energy norms.

Coefficients and sources are constant per triangle, so every integral
below is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .linalg import solve_spd
from .mesh import Triangulation


class FEMError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DofMap:
    """Interior vertices of a mesh numbered as degrees of freedom."""
    mesh: Triangulation

    @cached_property
    def dof_to_vertex(self) -> np.ndarray:
        return self.mesh.interior_vertices

    @cached_property
    def vertex_to_dof(self) -> np.ndarray:
        v2d = np.full(self.mesh.num_vertices, -1, dtype=np.int64)
        v2d[self.dof_to_vertex] = np.arange(len(self.dof_to_vertex))
        return v2d

    @property
    def n_dofs(self) -> int:
        return len(self.dof_to_vertex)

    def extend(self, u):
        """Dof vector(s) -> vertex vector(s), zero on the boundary."""
        u = np.asarray(u)
        full = np.zeros((self.mesh.num_vertices,) + u.shape[1:], dtype=u.dtype)
        full[self.dof_to_vertex] = u
        return full

    def restrict(self, u_full):
        return np.asarray(u_full)[self.dof_to_vertex]


def _element_values(mesh: Triangulation, coef) -> np.ndarray:
    if np.isscalar(coef):
        values = np.full(mesh.num_triangles, float(coef))
    else:
        values = np.asarray(coef, dtype=float)
    if values.shape != (mesh.num_triangles,):
        raise FEMError(f"expected {mesh.num_triangles} element values, got {values.shape}")
    return values


def assemble_matrix(mesh: Triangulation, coef, kind: str, triangles=None) -> sp.csr_matrix:
    """Weighted stiffness or mass matrix over all vertices.

    ``triangles`` restricts the integration domain to a subset of elements.
    """
    values = _element_values(mesh, coef)
    tri = mesh.triangles
    if triangles is not None:
        triangles = np.asarray(triangles)
        tri, values = tri[triangles], values[triangles]
    rows, cols, vals = kernels.p1_triplets(mesh.vertices, tri, values, kind)
    N = mesh.num_vertices
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    A.sum_duplicates()
    if kind == "stiffness":
        A = 0.5 * (A + A.T)
    return A.tocsr()


def _check_positive(mesh, coef):
    values = _element_values(mesh, coef)
    if np.any(~(values > 0)):
        bad = int(np.flatnonzero(~(values > 0))[0])
        raise FEMError(f"element coefficient must be positive (triangle {bad}: {values[bad]})")
    return values


def _interior(A, dofs: DofMap):
    d = dofs.dof_to_vertex
    return A[d][:, d].tocsr()


def assemble_stiffness(mesh: Triangulation, coef, interior: bool = True) -> sp.csr_matrix:
    """Matrix of int a grad(l_i).grad(l_j); Dirichlet dofs eliminated unless
    ``interior=False``."""
    values = _check_positive(mesh, coef)
    A = assemble_matrix(mesh, values, "stiffness")
    return _interior(A, DofMap(mesh)) if interior else A


def assemble_weighted_mass(mesh: Triangulation, coef=1.0, interior: bool = True) -> sp.csr_matrix:
    """Matrix of int a l_i l_j."""
    values = _check_positive(mesh, coef)
    A = assemble_matrix(mesh, values, "mass")
    return _interior(A, DofMap(mesh)) if interior else A


def element_source(mesh: Triangulation, g) -> np.ndarray:
    """Per-triangle source values from a raster (centroid sampling), a
    built-in name, a scalar, or an explicit array."""
    if isinstance(g, str):
        from .coefficient import builtin_source
        g = builtin_source(g)
    if hasattr(g, "sample"):
        return g.sample(mesh.centroids)
    return _element_values(mesh, g)


def assemble_load(mesh: Triangulation, g, interior: bool = True) -> np.ndarray:
    """Vector of int g l_i; each triangle contributes g_t |t| / 3 per vertex."""
    gt = element_source(mesh, g)
    contrib = np.repeat(gt * mesh.areas / 3.0, 3)
    f = np.bincount(mesh.triangles.ravel(), weights=contrib, minlength=mesh.num_vertices)
    return DofMap(mesh).restrict(f) if interior else f


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    stiffness: sp.csr_matrix
    load: np.ndarray
    dofs: DofMap


def assemble_system(mesh: Triangulation, coef, g) -> AssembledSystem:
    return AssembledSystem(assemble_stiffness(mesh, coef), assemble_load(mesh, g), DofMap(mesh))


def solve_reference(hier, coeff, g, tol: float = 1e-10) -> np.ndarray:
    """Fine-scale Galerkin solution on ``hier.fine`` (interior dof values).

    ``coeff`` may be an ``ElementCoefficient``, a raster or an array of
    per-fine-triangle values.
    """
    mesh = hier.fine if hasattr(hier, "fine") else hier
    values = fine_values(coeff, hier)
    system = assemble_system(mesh, values, g)
    if not np.any(system.load):
        return np.zeros(system.dofs.n_dofs)
    return solve_spd(system.stiffness, system.load, tol=tol)


def fine_values(coeff, hier) -> np.ndarray:
    mesh = hier.fine if hasattr(hier, "fine") else hier
    if hasattr(coeff, "fine"):
        return coeff.fine
    if hasattr(coeff, "sample"):
        return coeff.sample(mesh.centroids)
    return _element_values(mesh, coeff)


def energy_norm(u, stiffness) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(max(u @ (stiffness @ u), 0.0)))


def energy_error(u, v, stiffness, relative: bool = False) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape[0] != stiffness.shape[0]:
        raise FEMError(f"length mismatch: {u.shape}, {v.shape}, matrix {stiffness.shape}")
    err = energy_norm(u - v, stiffness)
    if relative:
        ref = energy_norm(u, stiffness)
        return err / ref if ref > 0 else (0.0 if err == 0 else np.inf)
    return err


def element_energies(mesh: Triangulation, coef, u_full) -> np.ndarray:
    """a |grad u|^2 |t| per triangle for a vertex vector ``u_full``."""
    return kernels.element_energy(mesh.vertices, mesh.triangles,
                                  _element_values(mesh, coef), u_full)
