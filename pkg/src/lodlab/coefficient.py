"""Piecewise-constant coefficients on Cartesian rasters.

Covers the benchmark generators (blocks, channels), the RASTER text format,
quasi-monotonicity classification on coarse element neighborhoods and
weighted Poincare constant estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from . import fem
from .linalg import smallest_nonzero_eig
from .mesh import MeshHierarchy, Patch, element_neighborhood


class RasterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Raster:
    """Values on an ``nx x ny`` grid; ``values[i, j]`` covers
    ``[i/nx, (i+1)/nx] x [j/ny, (j+1)/ny]``."""
    values: np.ndarray

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    def sample(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        i = np.clip(np.floor(points[:, 0] * self.nx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(points[:, 1] * self.ny).astype(int), 0, self.ny - 1)
        return self.values[i, j]


@dataclass(frozen=True, eq=False)
class RasterCoefficient(Raster):
    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise RasterError(f"raster values must be a nonempty 2D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise RasterError("coefficient values must be finite and strictly positive")
        object.__setattr__(self, "values", v)

    @property
    def alpha(self) -> float:
        return float(self.values.min())

    @property
    def beta(self) -> float:
        return float(self.values.max())

    def contrast(self) -> float:
        return self.beta / self.alpha

    def scaled(self, s: float) -> "RasterCoefficient":
        return RasterCoefficient(self.values * s)


def _interval(p, q):
    return (q, p) if p > q else (p, q)


def _fill_rectangles(n, rects, value, background):
    values = np.full((n, n), float(background))
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    for (x0, x1), (y0, y1) in rects:
        x0, x1 = _interval(x0, x1)
        y0, y1 = _interval(y0, y1)
        values[(X > x0) & (X < x1) & (Y > y0) & (Y < y1)] = value
    return values


def make_blocks(beta: float) -> RasterCoefficient:
    """Coefficient equal to ``beta`` on a block region of the 1/32 grid, 1 elsewhere."""
    if not beta >= 1:
        raise RasterError(f"beta must be >= 1, got {beta}")
    f = Fraction
    # first x-interval is given with reversed endpoints; _interval normalizes it
    rects = [((f(11, 32), f(5, 32)), (f(8, 32), f(11, 32))),
             ((f(5, 32), f(11, 32)), (f(8, 32), f(19, 32)))]
    return RasterCoefficient(_fill_rectangles(32, rects, beta, 1.0))


def make_channels(beta: float) -> RasterCoefficient:
    """Symmetrized sum of two vertical high-conductivity strips, ``A1(x, y) + A1(y, x)``."""
    if not beta >= 2:
        raise RasterError(f"beta must be >= 2, got {beta}")
    f = Fraction
    strips = [((f(8, 32), f(9, 32)), (f(1, 32), f(31, 32))),
              ((f(10, 32), f(11, 32)), (f(1, 32), f(31, 32)))]
    a1 = _fill_rectangles(32, strips, beta / 2.0, 1.0)
    return RasterCoefficient(a1 + a1.T)


def constant_raster(value: float = 1.0, n: int = 1) -> RasterCoefficient:
    return RasterCoefficient(np.full((n, n), float(value)))


def builtin_source(name: str) -> Raster:
    if name == "half-step":
        return Raster(np.array([[0.0], [1.0]]))
    if name == "spe-corners":
        v = np.zeros((4, 4))
        v[0, 0] = v[3, 3] = 8.0
        return Raster(v)
    if name in ("unit", "one"):
        return Raster(np.ones((1, 1)))
    raise RasterError(f"unknown built-in source {name!r} "
                      "(expected half-step, spe-corners or unit)")


def load_raster(path, positive: bool = True) -> Raster:
    """Read a RASTER text file.

    ``positive=False`` accepts zero and negative values (source terms).
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise RasterError(f"cannot read raster file {path}: {exc.strerror or exc}") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise RasterError(f"{path}: empty file, expected header 'RASTER <nx> <ny>'")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "RASTER":
        raise RasterError(f"{path}: malformed header {lines[0]!r}, expected 'RASTER <nx> <ny>'")
    try:
        nx, ny = int(head[1]), int(head[2])
    except ValueError:
        raise RasterError(f"{path}: malformed header {lines[0]!r}, sizes must be integers") from None
    if nx < 1 or ny < 1:
        raise RasterError(f"{path}: malformed header {lines[0]!r}, sizes must be positive")
    rows = lines[1:]
    if len(rows) != ny:
        raise RasterError(f"{path}: wrong row count, expected {ny} data rows, found {len(rows)}")
    values = np.empty((nx, ny))
    for j, line in enumerate(rows):
        tokens = line.split()
        if len(tokens) != nx:
            raise RasterError(f"{path}: row {j} has {len(tokens)} entries, expected {nx}")
        try:
            values[:, j] = [float(t) for t in tokens]
        except ValueError:
            raise RasterError(f"{path}: row {j} contains a non-numeric entry") from None
    if not np.all(np.isfinite(values)):
        raise RasterError(f"{path}: non-finite value")
    if positive:
        if np.any(values <= 0):
            i, j = np.argwhere(values <= 0)[0]
            raise RasterError(f"{path}: non-positive value {values[i, j]} at row {j}, column {i}")
        return RasterCoefficient(values)
    return Raster(values)


def write_raster(raster: Raster, path) -> None:
    v = raster.values
    lines = [f"RASTER {v.shape[0]} {v.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in v[:, j]) for j in range(v.shape[1])]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class ElementCoefficient:
    """Coefficient sampled per triangle of the fine and epsilon meshes."""
    fine: np.ndarray
    eps: np.ndarray

    @property
    def alpha(self) -> float:
        return float(min(self.fine.min(), self.eps.min()))

    @property
    def beta(self) -> float:
        return float(max(self.fine.max(), self.eps.max()))

    def contrast(self) -> float:
        return self.beta / self.alpha

    def scaled(self, s: float) -> "ElementCoefficient":
        return ElementCoefficient(self.fine * s, self.eps * s)


def sample_coefficient(coeff, hier: MeshHierarchy) -> ElementCoefficient:
    """Centroid sampling of a raster (or a scalar) on the hierarchy."""
    if isinstance(coeff, ElementCoefficient):
        return coeff
    if np.isscalar(coeff):
        if not coeff > 0:
            raise RasterError(f"coefficient must be positive, got {coeff}")
        return ElementCoefficient(np.full(hier.fine.num_triangles, float(coeff)),
                                  np.full(hier.eps_level.num_triangles, float(coeff)))
    return ElementCoefficient(coeff.sample(hier.fine.centroids),
                              coeff.sample(hier.eps_level.centroids))


# -- quasi-monotonicity ------------------------------------------------------

@dataclass(frozen=True)
class QuasiMonoEntry:
    triangle: int
    type: str          # "type1", "type0" or "none"
    argmax_cell: int   # epsilon-triangle index
    threshold: float


def _reaches_all(adj: sp.csr_matrix, a: np.ndarray, target: int, factor: float) -> bool:
    # reversed edges: u -> t whenever (t, u) is an edge, i.e. a_t <= factor * a_u
    A = adj.tocoo()
    keep = a[A.col] <= factor * a[A.row]
    G = sp.csr_matrix((np.ones(int(keep.sum())), (A.row[keep], A.col[keep])), shape=adj.shape)
    order = breadth_first_order(G, target, directed=True, return_predecessors=False)
    return len(order) == adj.shape[0]


def classify_quasi_monotone(coeff, hier: MeshHierarchy, T: int,
                            threshold_factor: float = 1.0) -> QuasiMonoEntry:
    """Highest k in {1, 0} such that every epsilon cell of the neighborhood
    of T reaches the maximal cell through a chain of type-k edges."""
    coeff = sample_coefficient(coeff, hier)
    patch = element_neighborhood(hier, T)
    cells = np.sort(hier.eps_child_map[patch.coarse_triangles].ravel())
    if len(cells) == 0:
        raise ValueError(f"neighborhood of triangle {T} is empty")
    a = coeff.eps[cells]
    tri = hier.eps_level.triangles[cells]
    nc = len(cells)
    inc = sp.csr_matrix((np.ones(3 * nc), (np.repeat(np.arange(nc), 3), tri.ravel())))
    shared = (inc @ inc.T).tocsr()
    shared.setdiag(0)
    shared.eliminate_zeros()
    target = int(np.argmax(a))
    edge = shared.copy()
    edge.data = (edge.data >= 2).astype(float)
    edge.eliminate_zeros()
    kind = "none"
    if _reaches_all(edge, a, target, threshold_factor):
        kind = "type1"
    elif _reaches_all(shared, a, target, threshold_factor):
        kind = "type0"
    return QuasiMonoEntry(int(T), kind, int(cells[target]), float(threshold_factor))


def quasi_monotone_report(coeff, hier: MeshHierarchy, threshold_factor: float = 1.0):
    coeff = sample_coefficient(coeff, hier)
    return [classify_quasi_monotone(coeff, hier, T, threshold_factor)
            for T in range(hier.coarse.num_triangles)]


# -- weighted Poincare constants ---------------------------------------------

@dataclass(frozen=True)
class PoincareEstimate:
    patch_kind: str
    patch_center: int
    C_P_est: float
    eigenvalue: float
    variant: str


def _patch_matrices(coeff, hier, patch):
    tris = hier.fine_triangles_of(patch.coarse_triangles)
    if len(tris) == 0:
        raise ValueError("empty patch")
    verts = np.unique(hier.fine.triangles[tris])
    values = fem.fine_values(coeff, hier)
    K = fem.assemble_matrix(hier.fine, values, "stiffness", tris)[verts][:, verts]
    M = fem.assemble_matrix(hier.fine, values, "mass", tris)[verts][:, verts]
    return K.tocsr(), M.tocsr(), hier.fine.boundary_vertex[verts]


def estimate_poincare(coeff, hier: MeshHierarchy, patch: Patch, variant: str = "auto",
                      tol: float = 1e-6, maxiter: int = 500) -> PoincareEstimate:
    """Estimate C_P = 1 / (lambda H_T^2) on the closure of ``patch``.

    ``"mean"`` bounds inf_c int a (v - c)^2 over fine functions vanishing on
    the domain boundary: all boundary vertices of the patch are tied into one
    unknown (the value -c) and the constant vector is deflated. ``"friedrichs"``
    bounds int a v^2 and needs the patch to touch the boundary. ``"auto"``
    selects ``"mean"``.
    """
    coeff = sample_coefficient(coeff, hier)
    K, M, bnd = _patch_matrices(coeff, hier, patch)
    n = K.shape[0]
    if variant == "auto":
        variant = "mean"
    if variant == "mean":
        free = np.flatnonzero(~bnd)
        if bnd.any():
            cols = np.empty(n, dtype=np.int64)
            cols[free] = np.arange(len(free))
            cols[bnd] = len(free)
            T = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, len(free) + 1))
            K, M = (T.T @ K @ T).tocsr(), (T.T @ M @ T).tocsr()
        lam, _ = smallest_nonzero_eig(K, M, np.ones(K.shape[0]), tol=tol, maxiter=maxiter)
    elif variant == "friedrichs":
        if not bnd.any():
            raise ValueError("friedrichs variant needs a patch touching the boundary")
        free = np.flatnonzero(~bnd)
        lam, _ = smallest_nonzero_eig(K[free][:, free], M[free][:, free], None,
                                      tol=tol, maxiter=maxiter)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    H = hier.coarse.mesh_size
    return PoincareEstimate(patch.kind, patch.center, float(1.0 / (lam * H * H)), float(lam), variant)
