"""Sparse solvers: SPD systems, constrained (saddle point) systems and the
smallest nonzero generalized eigenpair.

Matrices are ``scipy.sparse`` CSR matrices throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels

DIRECT_LIMIT = 200_000


class SolverError(np.linalg.LinAlgError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class RankDeficientError(SolverError):
    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = list(rows)


def _as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def is_symmetric(A, rtol=0.0) -> bool:
    A = _as_csr(A)
    diff = abs(A - A.T).max() if A.nnz else 0.0
    return diff <= rtol * (abs(A).max() if A.nnz else 0.0)


class SPDFactor:
    """Sparse LU with symmetric ordering; rejects matrices with a non-positive pivot."""

    def __init__(self, K):
        self.K = _as_csr(K)
        n = self.K.shape[0]
        if n == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(self.K.tocsc(), permc_spec="MMD_AT_PLUS_A",
                                 diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        piv = self._lu.U.diagonal()
        if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
            raise SolverError("matrix is not positive definite: "
                              f"{int(np.sum(piv <= 0))} non-positive pivots")

    def solve(self, f, tol=1e-10, refine=3):
        if self._lu is None:
            return np.zeros_like(np.asarray(f, dtype=float))
        f = np.asarray(f, dtype=float)
        x = self._lu.solve(f)
        return _refine(self.K, self._lu.solve, f, x, tol, refine)


BACKWARD_TOL = 1e-13


def _backward_error(A, x, f, r):
    """Componentwise backward error max |r| / (|A| |x| + |f|)."""
    denom = abs(A) @ np.abs(x) + np.abs(f)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, np.abs(r) / denom, np.where(r == 0, 0.0, np.inf))
    return float(ratio.max()) if ratio.size else 0.0


def _refine(A, solve, f, x, tol, steps, scale=None):
    """Iterative refinement until the relative residual drops below ``tol``.

    The residual norm is divided by ``scale`` (default ``|f|``). With high
    contrast, rounding alone can leave a residual above ``tol * |f|``; a
    solution whose componentwise backward error is at rounding level
    (``BACKWARD_TOL``) is then accepted as well.
    """
    if scale is None:
        scale = np.linalg.norm(f, axis=0)
        scale = np.where(scale == 0, 1.0, scale)
    history = []
    for _ in range(steps + 1):
        r = f - A @ x
        rel = np.max(np.linalg.norm(r, axis=0) / scale)
        history.append(rel)
        if rel <= tol or _backward_error(A, x, f, r) <= BACKWARD_TOL:
            return x
        x = x + solve(r)
    raise SolverError(f"residual {history[-1]:.3e} above tolerance {tol:.1e}", history)


def solve_spd(K, f, tol=1e-10, method="auto", maxiter=20000):
    """Solve ``K x = f`` for SPD ``K`` to relative residual ``tol``.

    ``method="auto"`` factorizes directly up to ``DIRECT_LIMIT`` unknowns and
    otherwise runs Jacobi-preconditioned CG.
    """
    K = _as_csr(K)
    f = np.asarray(f, dtype=float)
    if K.shape[0] != K.shape[1] or K.shape[0] != f.shape[0]:
        raise ValueError(f"shape mismatch: {K.shape} vs {f.shape}")
    if method == "auto":
        method = "direct" if K.shape[0] <= DIRECT_LIMIT else "cg"
    if method == "direct":
        return SPDFactor(K).solve(f, tol)
    if f.ndim != 1:
        return np.column_stack([solve_spd(K, col, tol, "cg", maxiter) for col in f.T])
    x, it, res = kernels.pcg_jacobi(K, f, tol=tol, maxiter=maxiter)
    if it < 0:
        raise SolverError(f"CG did not converge in {maxiter} iterations "
                          f"(relative residual {res:.3e})", [res])
    return x


@dataclass
class SaddleSystem:
    """``[[K, C^T], [C, 0]] [u; mu] = [rhs_primal; rhs_dual]``."""
    K: sp.spmatrix
    C: sp.spmatrix
    rhs_primal: np.ndarray
    rhs_dual: np.ndarray | None = None
    kept_rows: np.ndarray | None = field(default=None, repr=False)


def filter_constraints(C, tol=1e-12):
    """Drop (near) zero rows and exact duplicates of a constraint block.

    Returns the filtered CSR block and the indices of the kept rows.
    """
    C = _as_csr(C)
    if C.shape[0] == 0:
        return C, np.zeros(0, dtype=np.int64)
    norms = np.sqrt(np.asarray(C.multiply(C).sum(axis=1)).ravel())
    scale = norms.max() if len(norms) else 0.0
    keep = []
    seen = set()
    for i in np.flatnonzero(norms > tol * scale):
        lo, hi = C.indptr[i], C.indptr[i + 1]
        sig = (C.indices[lo:hi].tobytes(), C.data[lo:hi].tobytes())
        if sig in seen:
            continue
        seen.add(sig)
        keep.append(i)
    keep = np.asarray(keep, dtype=np.int64)
    return C[keep], keep


def _dependent_rows(G, tol, what):
    d = np.sqrt(np.diag(G))
    if np.any(d == 0):
        rows = np.flatnonzero(d == 0)
        raise RankDeficientError(f"{what}: zero constraint rows {rows.tolist()}", rows)
    w, V = np.linalg.eigh(G / np.outer(d, d))
    if w[0] <= tol * w[-1]:
        v = V[:, 0]
        rows = np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())
        raise RankDeficientError(
            f"{what}: constraint rows are linearly dependent (cond {w[-1] / max(w[0], 1e-300):.2e}); "
            f"dependent rows: {rows.tolist()}", rows)


def check_rank(C, tol=1e-12):
    """Raise ``RankDeficientError`` if the rows of ``C`` are dependent."""
    if C.shape[0] == 0:
        return
    _dependent_rows((C @ C.T).toarray(), tol, "constraint block")


class SaddleFactor:
    """Factorization of ``[[K, C^T], [C, 0]]`` reusable for many right sides.

    Eliminates the primal block through a sparse SPD factorization of K and
    a dense Cholesky factor of the small Schur complement ``C K^-1 C^T``;
    refinement is measured on the full block residual.
    """

    def __init__(self, K, C, rank_tol=1e-12):
        self.K = _as_csr(K)
        self.C = _as_csr(C)
        n, m = self.K.shape[0], self.C.shape[0]
        self.n, self.m = n, m
        if m == 0:
            self._spd = SPDFactor(self.K)
            return
        if self.C.shape[1] != n:
            raise ValueError(f"constraint block has {self.C.shape[1]} columns, expected {n}")
        self.A = sp.bmat([[self.K, self.C.T], [self.C, None]], format="csr")
        self._lu = None
        try:
            self._spd = SPDFactor(self.K)
        except SolverError:
            # K only semidefinite (kernel removed by the constraints): factor the block system
            check_rank(self.C, rank_tol)
            try:
                self._lu = spla.splu(self.A.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"saddle factorization failed: {exc}") from exc
            return
        self._Y = self._spd._lu.solve(self.C.T.toarray())
        S = self.C @ self._Y
        # rank is tested in the K^-1 geometry: weighted rows with high contrast
        # look nearly parallel in the Euclidean one without being dependent
        _dependent_rows(0.5 * (S + S.T), rank_tol, "saddle system")
        try:
            self._schur = sla.cho_factor(0.5 * (S + S.T))
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Schur complement is not positive definite: {exc}") from exc

    def _apply(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        f, g = b[:self.n], b[self.n:]
        w = self._spd._lu.solve(f)
        mu = sla.cho_solve(self._schur, self.C @ w - g)
        return np.concatenate([w - self._Y @ mu, mu])

    def solve(self, rhs_primal, rhs_dual=None, tol=1e-10, refine=3):
        f = np.asarray(rhs_primal, dtype=float)
        if self.m == 0:
            return self._spd.solve(f, tol, refine), np.zeros((0,) + f.shape[1:])
        g = np.zeros((self.m,) + f.shape[1:]) if rhs_dual is None else np.asarray(rhs_dual, float)
        b = np.concatenate([f, g])
        # residual scaled by 1 + |rhs| so zero right sides are handled
        x = _refine(self.A, self._apply, b, self._apply(b), tol, refine,
                    scale=1.0 + np.linalg.norm(b, axis=0))
        return x[:self.n], x[self.n:]


def solve_saddle(system: SaddleSystem, tol=1e-10):
    """Solve a constrained system; returns ``(u, multipliers)``."""
    C, kept = filter_constraints(system.C)
    system.kept_rows = kept
    g = None
    if system.rhs_dual is not None:
        g = np.asarray(system.rhs_dual, dtype=float)[kept]
    return SaddleFactor(system.K, C).solve(system.rhs_primal, g, tol)


INNER_TOL = 1e-9


def smallest_nonzero_eig(Kp, Mp, deflation_vectors=None, tol=1e-6, maxiter=500,
                         block=4, seed=0):
    """Smallest eigenpair of ``Kp v = lam Mp v`` on the Mp-orthogonal complement
    of ``deflation_vectors``.

    Block inverse iteration with Rayleigh-Ritz. The deflation vectors must
    span the kernel of ``Kp``; the singular solves are done through a
    bordered system, which keeps iterates Mp-orthogonal to them.
    """
    K = _as_csr(Kp)
    M = _as_csr(Mp)
    n = K.shape[0]
    Y = np.zeros((n, 0)) if deflation_vectors is None else np.asarray(deflation_vectors, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    q = Y.shape[1]
    if n - q < 1:
        raise ValueError("nothing left after deflation")
    if q:
        Y = _m_orthonormalize(Y, M)
        B = sp.csr_matrix(Y.T @ M)
        factor = SaddleFactor(K, B)

        # inexact inner solves are fine: convergence is judged on the true
        # eigen-residual and the deflation is re-imposed after each solve
        def apply_inv(R):
            return factor.solve(R, tol=INNER_TOL, refine=3)[0]
    else:
        factor = SPDFactor(K)

        def apply_inv(R):
            return factor.solve(R, tol=INNER_TOL, refine=3)

    b = max(1, min(block, n - q))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, b))
    if q:
        X -= Y @ (Y.T @ (M @ X))
    lam_old = np.inf
    res = np.inf
    for it in range(1, maxiter + 1):
        Z = apply_inv(M @ X)
        if q:
            Z -= Y @ (Y.T @ (M @ Z))
        Z, _ = np.linalg.qr(Z)
        KZ, MZ = K @ Z, M @ Z
        A_r = Z.T @ KZ
        B_r = Z.T @ MZ
        theta, W = sla.eigh(0.5 * (A_r + A_r.T), 0.5 * (B_r + B_r.T))
        X = Z @ W
        lam = theta[0]
        v = X[:, 0]
        Mv = M @ v
        r = K @ v - lam * Mv
        scale = max(abs(lam), np.finfo(float).tiny) * np.linalg.norm(Mv)
        res = np.linalg.norm(r) / scale
        if res <= tol or (abs(lam - lam_old) <= 1e-3 * tol * abs(lam) and res <= 1e3 * tol):
            v = v / np.sqrt(v @ Mv)
            return float(lam), v
        lam_old = lam
    raise SolverError(f"eigen-iteration did not converge in {maxiter} iterations "
                      f"(relative residual {res:.3e})", [res])


def _m_orthonormalize(Y, M):
    G = Y.T @ (M @ Y)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return np.linalg.solve(L, Y.T).T
