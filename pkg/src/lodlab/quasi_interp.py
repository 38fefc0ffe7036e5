"""Quasi-interpolation operators V_h -> V_H as sparse matrices, numerical
checks of their stability and approximation constants, and the 1D
constructions used to argue contrast independence.

Every operator is stored as a (coarse interior vertex) x (fine interior
vertex) CSR matrix acting on nodal values. Rows are built from a common
block ``R`` whose row ``3K + c`` holds the integrals of (weight x c-th hat
of coarse triangle K) against all fine hats, restricted to K.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize

from . import fem
from .linalg import SPDFactor, SolverError
from .mesh import MeshHierarchy, element_neighborhood

KINDS = ("clement", "pu-clement", "aw-clement", "proj", "aw-proj")
PROJECTIVE = ("proj", "aw-proj")


@dataclass(frozen=True, eq=False)
class InterpolationOperator:
    kind: str
    matrix: sp.csr_matrix
    hier: MeshHierarchy
    coeff: object = None

    @property
    def projective(self) -> bool:
        return self.kind in PROJECTIVE

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Prolongation restricted to interior dofs (fine x coarse)."""
        h = self.hier
        return h.prolongation[h.fine.interior_vertices][:, h.coarse.interior_vertices].tocsr()

    @cached_property
    def restriction(self) -> np.ndarray:
        """Dense matrix of the operator restricted to V_H."""
        return (self.matrix @ self.prolongation).toarray()

    def apply(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)


def _barycentric_on_parent(hier: MeshHierarchy):
    """Values of the three hats of each fine triangle's parent at its vertices.

    Returns ``(pv, cv)`` with ``pv[t, b, c]`` = hat c of the parent at fine
    vertex b of t and ``cv[K]`` the vertex ids of coarse triangle K.
    """
    coarse, fine = hier.coarse, hier.fine
    cv = coarse.triangles
    X = coarse.vertices[cv]                                   # (nK, 3, 2)
    T = np.concatenate([X.transpose(0, 2, 1), np.ones((len(cv), 1, 3))], axis=1)
    Tinv = np.linalg.inv(T)                                   # (nK, 3, 3)
    parent = hier.fine_parent
    p = fine.vertices[fine.triangles]                         # (nt, 3, 2)
    ph = np.concatenate([p, np.ones(p.shape[:2] + (1,))], axis=2)
    pv = np.einsum("tcj,tbj->tbc", Tinv[parent], ph)
    pv[np.abs(pv) < 1e-14] = 0.0
    return pv, cv


def _element_weights(hier, coeff) -> np.ndarray:
    if coeff is None:
        return np.ones(hier.fine.num_triangles)
    return fem.fine_values(coeff, hier)


def _mass_coupling(hier, values, pv):
    """``W[t, a, c]`` = int_t a * (hat c of parent) * (fine hat a), exactly."""
    w = values * hier.fine.areas / 12.0
    return w[:, None, None] * (pv.sum(axis=1, keepdims=True) + pv)


def _duffy_rule(n: int = 8):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    b1 = u.ravel()
    b2 = ((1 - u) * v).ravel()
    weights = (2 * (1 - u) * wu * wv).ravel()
    bary = np.column_stack([1 - b1 - b2, b1, b2])
    return bary, weights


def _pu_coupling(hier, pv, cv, nq=8):
    """``W[t, a, c]`` = int_t (partition-of-unity hat c) * (fine hat a)."""
    bary, wq = _duffy_rule(nq)
    interior = ~hier.coarse.boundary_vertex[cv[hier.fine_parent]]          # (nt, 3)
    L = np.einsum("qb,tbc->tqc", bary, pv)                                # hats at qpoints
    L = np.where(interior[:, None, :], L, 0.0)
    S = L.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        Lt = np.where(S > 0, L / np.where(S > 0, S, 1.0), 0.0)
    return hier.fine.areas[:, None, None] * np.einsum("q,qa,tqc->tac", wq, bary, Lt)


def _coupling_block(hier, W):
    """Sparse R with row 3K+c, columns fine vertices."""
    parent = hier.fine_parent
    tri = hier.fine.triangles
    rows = (3 * parent[:, None, None] + np.arange(3)[None, None, :]) + 0 * tri[:, :, None]
    cols = np.broadcast_to(tri[:, :, None], W.shape)
    nK = hier.coarse.num_triangles
    R = sp.csr_matrix((W.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(3 * nK, hier.fine.num_vertices))
    R.sum_duplicates()
    return R


def _vertex_aggregation(hier, cv):
    """Sparse map (coarse interior vertex) x (3K + c) selecting slots of z."""
    v2d = fem.DofMap(hier.coarse).vertex_to_dof
    slot_dof = v2d[cv.ravel()]
    keep = slot_dof >= 0
    slots = np.flatnonzero(keep)
    return sp.csr_matrix((np.ones(len(slots)), (slot_dof[keep], slots)),
                         shape=(len(hier.coarse_interior), 3 * len(cv)))


def _normalized_rows(hier, R, A):
    C = (A @ R).tocsr()
    den = np.asarray(C.sum(axis=1)).ravel()
    if np.any(den <= 0):
        raise ValueError("vanishing normalization in quasi-interpolation row")
    C = sp.diags(1.0 / den) @ C
    return C[:, hier.fine.interior_vertices].tocsr()


def build_clement(hier: MeshHierarchy) -> InterpolationOperator:
    """Nodal values (v, l_z) / (1, l_z)."""
    pv, cv = _barycentric_on_parent(hier)
    R = _coupling_block(hier, _mass_coupling(hier, _element_weights(hier, None), pv))
    return InterpolationOperator("clement", _normalized_rows(hier, R, _vertex_aggregation(hier, cv)),
                                 hier)


def build_aweighted(hier: MeshHierarchy, coeff) -> InterpolationOperator:
    """Nodal values (a v, l_z) / (a, l_z)."""
    pv, cv = _barycentric_on_parent(hier)
    R = _coupling_block(hier, _mass_coupling(hier, _element_weights(hier, coeff), pv))
    return InterpolationOperator("aw-clement",
                                 _normalized_rows(hier, R, _vertex_aggregation(hier, cv)),
                                 hier, coeff)


def build_pu_clement(hier: MeshHierarchy, quad_order: int = 8) -> InterpolationOperator:
    """Clement averages against the normalized hats l_z / sum_interior l_y.

    The normalized hats are rational on each fine triangle and are integrated
    with a collapsed Gauss rule; where no interior hat is active the weight is 0.
    """
    pv, cv = _barycentric_on_parent(hier)
    R = _coupling_block(hier, _pu_coupling(hier, pv, cv, quad_order))
    return InterpolationOperator("pu-clement",
                                 _normalized_rows(hier, R, _vertex_aggregation(hier, cv)), hier)


def build_local_proj(hier: MeshHierarchy, coeff=None) -> InterpolationOperator:
    """Value at z of the local (weighted) L2 projection onto V_H restricted to the star of z.

    ``coeff=None`` gives the unweighted variant.
    """
    pv, cv = _barycentric_on_parent(hier)
    W = _mass_coupling(hier, _element_weights(hier, coeff), pv)
    R = _coupling_block(hier, W)
    mm = np.zeros((len(cv), 3, 3))
    np.add.at(mm, hier.fine_parent, np.einsum("tac,tad->tcd", W, pv))
    coarse = hier.coarse
    bnd = coarse.boundary_vertex
    rows, cols, vals = [], [], []
    for zi, z in enumerate(hier.coarse_interior):
        star = coarse.vertex_triangle[z].indices
        local = np.unique(cv[star])
        local = local[~bnd[local]]
        pos = {int(v): i for i, v in enumerate(local)}
        Mz = np.zeros((len(local), len(local)))
        for K in star:
            idx = [pos.get(int(v), -1) for v in cv[K]]
            for c in range(3):
                if idx[c] < 0:
                    continue
                for d in range(3):
                    if idx[d] >= 0:
                        Mz[idx[c], idx[d]] += mm[K, c, d]
        e = np.zeros(len(local))
        e[pos[int(z)]] = 1.0
        try:
            s = sla.solve(Mz, e, assume_a="pos")
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"local mass matrix of vertex {z} is singular") from exc
        for K in star:
            for c in range(3):
                i = pos.get(int(cv[K, c]), -1)
                if i >= 0:
                    rows.append(zi)
                    cols.append(3 * K + c)
                    vals.append(s[i])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(hier.coarse_interior), 3 * len(cv)))
    C = (A @ R)[:, hier.fine.interior_vertices].tocsr()
    kind = "proj" if coeff is None else "aw-proj"
    return InterpolationOperator(kind, C, hier, coeff)


def build_operator(kind: str, hier: MeshHierarchy, coeff=None) -> InterpolationOperator:
    if kind == "clement":
        return build_clement(hier)
    if kind == "pu-clement":
        return build_pu_clement(hier)
    if kind == "aw-clement":
        return build_aweighted(hier, coeff)
    if kind == "proj":
        return build_local_proj(hier, None)
    if kind == "aw-proj":
        return build_local_proj(hier, coeff)
    raise ValueError(f"unknown operator kind {kind!r}; expected one of {', '.join(KINDS)}")


# -- verification ------------------------------------------------------------

@dataclass(frozen=True)
class QI2Diagnostic:
    invertible: bool
    sigma_min: float
    sigma_max: float
    near_null: np.ndarray


def verify_qi2(op: InterpolationOperator, rtol: float = 1e-12) -> QI2Diagnostic:
    """Invertibility of the operator restricted to the coarse space."""
    R = op.restriction
    if R.size == 0:
        return QI2Diagnostic(True, np.inf, np.inf, np.zeros(0))
    _, s, Vt = np.linalg.svd(R)
    return QI2Diagnostic(bool(s[-1] > rtol * s[0]), float(s[-1]), float(s[0]), Vt[-1])


@dataclass(frozen=True)
class QIConstants:
    per_triangle: np.ndarray      # sqrt of the sup ratio, per coarse triangle
    C_qip_est: float
    C_qip_prime_est: float        # 1 for projective kinds, NaN otherwise
    C_inv1_est: float
    C_inv2_est: float


def _abs_integral(vals):
    """Exact int_t |v| / |t| for linear v with vertex values ``vals`` (n, 3)."""
    v = np.sort(vals, axis=1)[:, ::-1]
    a, b, c = v[:, 0], v[:, 1], v[:, 2]
    mean = v.mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        one_pos = np.where((a > 0) & (b <= 0), a ** 3 / (3 * (a - b) * (a - c)), 0.0)
        one_neg = np.where((b > 0) & (c < 0), (-c) ** 3 / (3 * (a - c) * (b - c)), 0.0)
    pos = np.where(c >= 0, mean, np.where(b > 0, mean + one_neg, np.where(a > 0, one_pos, 0.0)))
    return 2 * pos - mean


def _inverse_constants(hier, values, pv, T):
    fine_t = hier.child_map[T]
    a = values[fine_t]
    area = hier.fine.areas[fine_t]
    total = float(a @ area)
    P = pv[fine_t]                                            # (m, 3, 3)
    W = (a * area / 12.0)[:, None, None] * (P.sum(axis=1, keepdims=True) + P)
    m = np.einsum("tac,tad->cd", W, P)
    c2 = np.sqrt(total * np.max(np.diag(np.linalg.inv(m))))
    c1 = 0.0
    for i in range(3):
        others = [j for j in range(3) if j != i]

        def l1(x, i=i, others=others):
            w = np.zeros(3)
            w[i] = 1.0
            w[others] = x
            return float(a * area @ _abs_integral(P @ w))

        res = minimize(l1, np.zeros(2), method="Nelder-Mead", bounds=[(-1, 1), (-1, 1)],
                       options={"xatol": 1e-8, "fatol": 1e-12 * total})
        c1 = max(c1, total / res.fun)
    return c1, c2


def estimate_qi3(op: InterpolationOperator, coeff=None, triangles=None) -> QIConstants:
    """Estimate the approximation/stability constant of ``op`` per coarse triangle T:

        sup_v (H^-2 |a^1/2 (v - I v)|_T^2 + |a^1/2 grad(v - I v)|_T^2) / |a^1/2 grad v|_{w_T}^2

    over fine functions on the neighborhood w_T (constants removed by pinning
    one value when w_T does not touch the boundary; both forms vanish on them).

    With E mapping v to (v - I v) on the vertices of T, G the numerator form
    there and D the denominator, the nonzero spectrum of D^-1 E^T G E equals
    that of L^T (E D^-1 E^T) L with G = L L^T, a dense matrix of the size of
    T's vertex set. Its top eigenvalue is computed directly; the reported
    constant is its square root.
    """
    hier = op.hier
    if coeff is None:
        coeff = op.coeff if op.coeff is not None else 1.0
    values = np.full(hier.fine.num_triangles, float(coeff)) if np.isscalar(coeff) else \
        fem.fine_values(coeff, hier)
    fine = hier.fine
    H = hier.coarse.mesh_size
    v2d = fem.DofMap(fine).vertex_to_dof
    c2d = fem.DofMap(hier.coarse).vertex_to_dof
    pv, _ = _barycentric_on_parent(hier)
    if triangles is None:
        triangles = range(hier.coarse.num_triangles)
    ratios, inv1, inv2 = [], [], []
    for T in triangles:
        patch = element_neighborhood(hier, T)
        ftri = hier.fine_triangles_of(patch.coarse_triangles)
        verts = np.unique(fine.triangles[ftri])
        dofs = verts[~fine.boundary_vertex[verts]]
        if not fine.boundary_vertex[verts].any():
            dofs = dofs[1:]
        Kw = fem.assemble_matrix(fine, values, "stiffness", ftri)[dofs][:, dofs]
        tT = hier.child_map[T]
        vT = np.unique(fine.triangles[tT])
        G = (fem.assemble_matrix(fine, values, "mass", tT) / H ** 2
             + fem.assemble_matrix(fine, values, "stiffness", tT))[vT][:, vT].toarray()
        yT = hier.coarse.triangles[T]
        yT = yT[c2d[yT] >= 0]
        col = np.full(fine.num_vertices, -1)
        col[dofs] = np.arange(len(dofs))
        inside = col[vT] >= 0
        E = np.zeros((len(vT), len(dofs)))
        E[np.flatnonzero(inside), col[vT][inside]] = 1.0
        if len(yT):
            E -= hier.prolongation[vT][:, yT].toarray() @ op.matrix[c2d[yT]][:, v2d[dofs]].toarray()
        Z = SPDFactor(Kw).solve(E.T, tol=1e-8)
        W = E @ Z
        L = np.linalg.cholesky(G)
        ratios.append(float(np.sqrt(np.linalg.eigvalsh(L.T @ (0.5 * (W + W.T)) @ L)[-1])))
        c1, c2 = _inverse_constants(hier, values, pv, T)
        inv1.append(c1)
        inv2.append(c2)
    ratios = np.asarray(ratios)
    return QIConstants(ratios, float(ratios.max()), 1.0 if op.projective else np.nan,
                       float(max(inv1)), float(max(inv2)))


# -- one-dimensional constructions ------------------------------------------

def _check_geometry(y, eps):
    if not (0 < eps and eps < y and y + eps < 1 and 2 * y > eps):
        raise ValueError(f"degenerate inclusion geometry: need 0 < eps < y and y + eps < 1 "
                         f"(y={y}, eps={eps})")


def _pw_integral(breaks, coef, f, g):
    """int f g a over [breaks[0], breaks[-1]] for linear-per-piece f, g (Simpson, exact)."""
    x0, x1 = breaks[:-1], breaks[1:]
    xm = 0.5 * (x0 + x1)
    return float(np.sum(coef * (x1 - x0) / 6 * (f(x0) * g(x0) + 4 * f(xm) * g(xm)
                                                   + f(x1) * g(x1))))


@dataclass(frozen=True)
class EtaConstruction1D:
    y: float
    eps: float
    beta: float
    b1: float
    b2: float
    nodal_values: np.ndarray      # weighted Clement values of eta at 0, 1, 2
    nodal_deviation: float        # max |I eta - lambda_z| at those nodes
    energy_ratio: float           # |a^1/2 eta'|^2 / |a^1/2 lambda_z'|^2
    energy_bound_lhs: float       # (b1/y)^2 + ((b2-b1)/(1-y))^2
    energy_bound_rhs: float       # 9/eps^4 + 9/eps^2

    def eta(self, x):
        return _eta_values(x, self.y, self.b1, self.b2)


def _eta_values(x, y, b1, b2):
    """Piecewise-linear eta on [0, 2] through (0,0), (y,b1), (1,b2), (2-y,b1), (2,0)."""
    x = np.asarray(x, dtype=float)
    xm = np.where(x > 1, 2 - x, x)
    val = np.where(xm <= y, b1 * xm / y, b1 + (b2 - b1) * (xm - y) / (1 - y))
    return np.where((x < 0) | (x > 2), 0.0, val)


def eta_1d(y: float, eps: float, beta: float, h: float | None = None) -> EtaConstruction1D:
    """Contrast-independent preimage of the hat at z = 1 under the weighted Clement operator.

    The coarse mesh has nodes -1..3 with H = 1; an inclusion of value ``beta``
    sits on [y - eps, y + eps] and on its mirror image about z = 1.
    """
    _check_geometry(y, eps)
    b1 = -y ** 2 * (3 - 3 * y - 2 * eps) / (eps * (2 * y - eps))
    b2 = (4 * y ** 2 * (1 - y) - (4 * y * (1 - y) - eps) * b1) / (y * eps)
    h = eps / 4 if h is None else h
    pts = np.concatenate([np.linspace(-1, 3, int(np.ceil(4 / h)) + 1),
                          [y - eps, y, y + eps, 2 - y - eps, 2 - y, 2 - y + eps]])
    breaks = np.unique(np.round(pts, 14))
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    coef = np.where((np.abs(mid - y) < eps) | (np.abs(mid - (2 - y)) < eps), beta, 1.0)

    def eta(x):
        return _eta_values(x, y, b1, b2)

    def hat(c):
        return lambda x: np.maximum(0.0, 1 - np.abs(x - c))

    nodal = np.array([_pw_integral(breaks, coef, hat(c), eta)
                      / _pw_integral(breaks, coef, hat(c), lambda x: np.ones_like(x))
                      for c in (0.0, 1.0, 2.0)])
    dev = float(np.max(np.abs(nodal - np.array([0.0, 1.0, 0.0]))))
    # slopes are piecewise constant, so midpoint evaluation is exact
    deta = np.diff(eta(breaks)) / np.diff(breaks)
    dlam = np.diff(hat(1.0)(breaks)) / np.diff(breaks)
    w = coef * np.diff(breaks)
    ratio = float((w @ deta ** 2) / (w @ dlam ** 2))
    lhs = (b1 / y) ** 2 + ((b2 - b1) / (1 - y)) ** 2
    return EtaConstruction1D(y, eps, beta, b1, b2, nodal, dev, ratio, lhs,
                             9 / eps ** 4 + 9 / eps ** 2)


def mu_min_1d(y: float, eps: float, beta: float) -> float:
    """Smallest eigenvalue of diag(M)^-1 M for the weighted mass matrix of the
    three hats on [0, 2] with an inclusion of value ``beta`` on [y - eps, y + eps]."""
    _check_geometry(y, eps)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    breaks = np.array([0.0, y - eps, y + eps, 1.0, 2.0])
    coef = np.array([1.0, beta, 1.0, 1.0])
    hats = [lambda x, c=c: np.maximum(0.0, 1 - np.abs(x - c)) for c in (0.0, 1.0, 2.0)]
    M = np.array([[_pw_integral(breaks, coef, f, g) for g in hats] for f in hats])
    d = np.sqrt(np.diag(M))
    return float(np.linalg.eigvalsh(M / np.outer(d, d))[0])
