"""Correctors, the multiscale coarse basis and the coarse Galerkin solve.

A corrector of the coarse hat l_z is the energy projection of l_z onto the
kernel of the quasi-interpolation operator, computed on a patch with
homogeneous Dirichlet values on the patch boundary. The kernel constraint is
imposed with Lagrange multipliers; one factorization per distinct patch is
shared by every right-hand side that uses it.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .linalg import SaddleFactor, SolverError, SPDFactor, filter_constraints
from .mesh import MeshHierarchy, Patch, element_patch, nodal_patch
from .quasi_interp import InterpolationOperator


@dataclass(frozen=True, eq=False)
class Corrector:
    node: int                 # coarse vertex id
    order: int | None         # None for the global corrector
    dofs: np.ndarray          # fine dof ids of the support
    local: np.ndarray         # values on ``dofs``
    n_dofs: int
    patch: Patch | None = None

    @property
    def values(self) -> np.ndarray:
        v = np.zeros(self.n_dofs)
        v[self.dofs] = self.local
        return v


@dataclass(frozen=True, eq=False)
class CoarseBasis:
    """Columns psi_z = l_z - phi_z over interior coarse vertices (fine dofs x coarse dofs)."""
    psi: sp.csr_matrix
    correctors: sp.csr_matrix
    kind: str
    k: int | None
    localization: str


@dataclass(frozen=True, eq=False)
class CoarseSolution:
    coefficients: np.ndarray
    fine: np.ndarray
    H: float
    k: int | None
    kind: str
    beta: float
    basis: CoarseBasis = field(repr=False)
    corrector_solves: int = 0


def k_tied(n_H: int) -> int:
    """Patch order |log2 H| + 1 with H = 1/n_H."""
    return int(round(math.log2(n_H))) + 1


def k_theory(n_H: int, contrast: float) -> int:
    """Patch order ceil(2 log(1/H) + log(beta/alpha) / 2)."""
    return max(1, math.ceil(2 * math.log(n_H) + 0.5 * math.log(contrast)))


class CorrectorSolver:
    """Shared state for corrector solves: fine stiffness, prolonged hats and
    a factorization cache keyed by patch."""

    def __init__(self, hier: MeshHierarchy, coeff, op: InterpolationOperator, tol: float = 1e-10,
                 cache_size: int = 4):
        self.hier = hier
        self.op = op
        self.values = fem.fine_values(coeff, hier) if not np.isscalar(coeff) else \
            np.full(hier.fine.num_triangles, float(coeff))
        self.dofmap = fem.DofMap(hier.fine)
        self.K = fem.assemble_stiffness(hier.fine, self.values)
        self.P = op.prolongation
        self.coarse_dofs = fem.DofMap(hier.coarse)
        self.tol = tol
        self.cache_size = cache_size
        self._factors: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.solves = 0

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    def patch_dofs(self, patch: Patch) -> np.ndarray:
        return self.dofmap.vertex_to_dof[patch.fine_vertices_interior]

    def _factor(self, key, dofs):
        with self._lock:
            f = self._factors.get(key)
            if f is not None:
                self._factors.move_to_end(key)
                return f
        C, _ = filter_constraints(self.op.matrix[:, dofs])
        f = SaddleFactor(self.K[dofs][:, dofs], C)
        with self._lock:
            self._factors[key] = f
            while len(self._factors) > self.cache_size:
                self._factors.popitem(last=False)
        return f

    def solve_patch(self, key, dofs, rhs) -> np.ndarray:
        """Corrector values on ``dofs`` for right sides ``rhs`` (len(dofs) x m)."""
        if len(dofs) == 0:
            return np.zeros((0, rhs.shape[1]))
        u, _ = self._factor(key, dofs).solve(rhs, tol=self.tol)
        with self._lock:
            self.solves += rhs.shape[1]
        return u

    def hat(self, z: int) -> np.ndarray:
        """Prolonged hat of coarse vertex ``z`` on fine dofs."""
        j = self.coarse_dofs.vertex_to_dof[z]
        if j < 0:
            raise ValueError(f"coarse vertex {z} is not interior")
        return self.P[:, j].toarray().ravel()

    def element_stiffness(self, T: int) -> sp.csr_matrix:
        d = self.dofmap.dof_to_vertex
        A = fem.assemble_matrix(self.hier.fine, self.values, "stiffness", self.hier.child_map[T])
        return A[d][:, d].tocsr()


def _global_patch(hier) -> Patch:
    tris = np.arange(hier.coarse.num_triangles)
    return Patch("global", -1, 0, tris, hier.fine_interior_vertices_of(tris))


def corrector_global(hier, coeff, op, z: int, solver: CorrectorSolver | None = None) -> Corrector:
    """Corrector of the hat at ``z`` on the whole domain."""
    solver = solver or CorrectorSolver(hier, coeff, op)
    patch = _global_patch(hier)
    dofs = solver.patch_dofs(patch)
    rhs = (solver.K @ solver.hat(z))[dofs]
    u = solver.solve_patch(("global",), dofs, rhs[:, None])[:, 0]
    return Corrector(int(z), None, dofs, u, solver.n_dofs, patch)


def corrector_local(hier, coeff, op, z: int, k: int,
                    solver: CorrectorSolver | None = None) -> Corrector:
    """Corrector of the hat at ``z`` truncated to the order-k nodal patch."""
    solver = solver or CorrectorSolver(hier, coeff, op)
    patch = nodal_patch(hier, z, k)
    dofs = solver.patch_dofs(patch)
    rhs = (solver.K @ solver.hat(z))[dofs]
    u = solver.solve_patch(patch.key, dofs, rhs[:, None])[:, 0]
    return Corrector(int(z), int(k), dofs, u, solver.n_dofs, patch)


def corrector_element_twostep(hier, coeff, op, T: int, y: int, k: int,
                              solver: CorrectorSolver | None = None) -> Corrector:
    """Element contribution: energy projection of l_y restricted to T onto
    the kernel on the order-k element patch of T."""
    solver = solver or CorrectorSolver(hier, coeff, op)
    if y not in hier.coarse.triangles[T]:
        raise ValueError(f"coarse vertex {y} is not a vertex of triangle {T}")
    patch = element_patch(hier, T, k)
    dofs = solver.patch_dofs(patch)
    rhs = (solver.element_stiffness(T) @ solver.hat(y))[dofs]
    u = solver.solve_patch(patch.key, dofs, rhs[:, None])[:, 0]
    return Corrector(int(y), int(k), dofs, u, solver.n_dofs, patch)


def assemble_twostep(hier, coeff, op, z: int, k: int,
                     solver: CorrectorSolver | None = None) -> Corrector:
    """Nodal corrector as the sum of element contributions over the star of ``z``."""
    solver = solver or CorrectorSolver(hier, coeff, op)
    total = np.zeros(solver.n_dofs)
    support = []
    for T in hier.coarse.vertex_triangle[z].indices:
        piece = corrector_element_twostep(hier, coeff, op, int(T), z, k, solver)
        total[piece.dofs] += piece.local
        support.append(piece.dofs)
    dofs = np.unique(np.concatenate(support)) if support else np.zeros(0, dtype=np.int64)
    return Corrector(int(z), int(k), dofs, total[dofs], solver.n_dofs, None)


def _run_groups(solver, groups, workers):
    """Solve grouped right sides; ``groups`` maps key -> (dofs, [(col, rhs)])."""
    keys = sorted(groups)

    def work(key):
        dofs, items = groups[key]
        rhs = np.column_stack([r for _, r in items])
        return solver.solve_patch(key, dofs, rhs)

    if workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, keys))
    else:
        results = [work(key) for key in keys]
    return keys, results


def build_basis(hier, coeff, op, k=None, localization: str = "nodal", workers: int = 1,
                solver: CorrectorSolver | None = None) -> CoarseBasis:
    """Correctors for every interior coarse vertex and the basis psi = l - phi.

    ``k=None`` (or ``"global"``) solves on the whole domain.
    """
    solver = solver or CorrectorSolver(hier, coeff, op)
    interior = hier.coarse_interior
    KP = (solver.K @ solver.P).toarray() if localization == "nodal" or k in (None, "global") \
        else None
    groups: dict = {}
    if k in (None, "global"):
        patch = _global_patch(hier)
        dofs = solver.patch_dofs(patch)
        groups[("global",)] = (dofs, [(j, KP[dofs, j]) for j in range(len(interior))])
    elif localization == "nodal":
        for j, z in enumerate(interior):
            patch = nodal_patch(hier, int(z), k)
            dofs = solver.patch_dofs(patch)
            groups.setdefault(patch.key, (dofs, []))[1].append((j, KP[dofs, j]))
    elif localization == "element":
        c2d = solver.coarse_dofs.vertex_to_dof
        for T in range(hier.coarse.num_triangles):
            ys = [y for y in hier.coarse.triangles[T] if c2d[y] >= 0]
            if not ys:
                continue
            patch = element_patch(hier, T, k)
            dofs = solver.patch_dofs(patch)
            KT = solver.element_stiffness(T)
            entry = groups.setdefault(patch.key, (dofs, []))
            for y in ys:
                j = int(c2d[y])
                entry[1].append((j, (KT @ solver.P[:, j].toarray().ravel())[dofs]))
    else:
        raise ValueError(f"unknown localization {localization!r} (expected nodal or element)")

    keys, results = _run_groups(solver, groups, workers)
    rows, cols, vals = [], [], []
    for key, U in zip(keys, results):
        dofs, items = groups[key]
        for c, (j, _) in enumerate(items):
            rows.append(dofs)
            cols.append(np.full(len(dofs), j))
            vals.append(U[:, c])
    n, m = solver.n_dofs, len(interior)
    if rows:
        Phi = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, m))
    else:
        Phi = sp.csr_matrix((n, m))
    Phi.sum_duplicates()
    psi = (solver.P - Phi).tocsr()
    return CoarseBasis(psi, Phi, op.kind, None if k in (None, "global") else int(k), localization)


def solve_coarse(hier, coeff, op, g, k=None, localization: str = "nodal", workers: int = 1,
                 solver: CorrectorSolver | None = None, basis: CoarseBasis | None = None,
                 beta: float = float("nan")) -> CoarseSolution:
    """Galerkin solution in the span of the corrected hats."""
    solver = solver or CorrectorSolver(hier, coeff, op)
    before = solver.solves
    if basis is None:
        basis = build_basis(hier, coeff, op, k, localization, workers, solver)
    psi = basis.psi
    A = (psi.T @ (solver.K @ psi)).toarray()
    scale = np.abs(A).max() if A.size else 0.0
    if A.size and np.abs(A - A.T).max() > 1e-10 * scale:
        raise SolverError("coarse stiffness is not symmetric "
                          f"(asymmetry {np.abs(A - A.T).max() / scale:.2e})")
    A = 0.5 * (A + A.T)
    f = psi.T @ fem.assemble_load(hier.fine, g)
    if not np.any(f):
        c = np.zeros(len(f))
    else:
        try:
            c = SPDFactor(sp.csr_matrix(A)).solve(f, tol=1e-10)
        except SolverError as exc:
            raise SolverError(f"coarse system is not positive definite; correctors may be "
                              f"corrupted ({exc})") from exc
    return CoarseSolution(c, psi @ c, hier.coarse.mesh_size, basis.k, op.kind, beta, basis,
                          solver.solves - before)


def decay_profile(hier, coeff, op, z: int, k_list, solver: CorrectorSolver | None = None):
    """Energy of the global corrector of ``z`` outside the order-k nodal patches.

    Returns ``[(k, tail_energy), ...]``.
    """
    solver = solver or CorrectorSolver(hier, coeff, op)
    phi = corrector_global(hier, coeff, op, z, solver)
    e = fem.element_energies(hier.fine, solver.values, solver.dofmap.extend(phi.values))
    parent = hier.fine_parent
    out = []
    for k in k_list:
        inside = np.zeros(hier.coarse.num_triangles, dtype=bool)
        inside[nodal_patch(hier, z, k).coarse_triangles] = True
        out.append((int(k), float(np.sqrt(e[~inside[parent]].sum()))))
    return out


def split_two_scale(op: InterpolationOperator, v):
    """Write ``v = prolong(v_H) + r`` with ``op(r) = 0``; returns ``(v_H, r)``."""
    v = np.asarray(v, dtype=float)
    vH = np.linalg.solve(op.restriction, op.apply(v))
    return vH, v - op.prolongation @ vH
