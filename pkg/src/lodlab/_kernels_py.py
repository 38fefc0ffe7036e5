"""Numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def _gradients(vertices, triangles):
    p = vertices[triangles]
    x0, y0 = p[:, 0, 0], p[:, 0, 1]
    x1, y1 = p[:, 1, 0], p[:, 1, 1]
    x2, y2 = p[:, 2, 0], p[:, 2, 1]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    gx = np.stack([y1 - y2, y2 - y0, y0 - y1], axis=1) / det[:, None]
    gy = np.stack([x2 - x1, x0 - x2, x1 - x0], axis=1) / det[:, None]
    return gx, gy, 0.5 * np.abs(det)


def p1_triplets(vertices, triangles, coef, kind):
    gx, gy, area = _gradients(vertices, triangles)
    w = coef * area
    if kind == 0:
        loc = w[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
    else:
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        loc = w[:, None, None] * ref[None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return rows.astype(np.int64), cols.astype(np.int64), loc.ravel()


def element_energy(vertices, triangles, coef, u):
    gx, gy, area = _gradients(vertices, triangles)
    ut = u[triangles]
    dx = np.sum(gx * ut, axis=1)
    dy = np.sum(gy * ut, axis=1)
    return coef * area * (dx * dx + dy * dy)


def csr_matvec(indptr, indices, data, x):
    n = len(indptr) - 1
    row = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(row, weights=data * x[indices], minlength=n)


def pcg_jacobi(indptr, indices, data, b, x0, tol, maxiter):
    n = len(b)
    row = np.repeat(np.arange(n), np.diff(indptr))
    diag = np.ones(n)
    on_diag = indices == row
    diag[row[on_diag]] = data[on_diag]
    dinv = 1.0 / np.where(diag == 0.0, 1.0, diag)

    def matvec(v):
        return np.bincount(row, weights=data * v[indices], minlength=n)

    bnorm = np.linalg.norm(b) or 1.0
    x = np.array(x0, dtype=float, copy=True)
    r = b - matvec(x)
    rnorm = np.linalg.norm(r)
    if rnorm <= tol * bnorm:
        return x, 0, rnorm / bnorm
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        q = matvec(p)
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return x, k, rnorm / bnorm
        z = dinv * r
        rz_old, rz = rz, r @ z
        p = z + (rz / rz_old) * p
    return x, -1, rnorm / bnorm
