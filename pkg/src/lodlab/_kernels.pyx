# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled P1 kernels: element triplets, element energies, Jacobi-PCG."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def p1_triplets(double[:, ::1] vertices, long[:, ::1] triangles,
                double[::1] coef, int kind):
    """COO triplets of a coefficient-weighted P1 matrix.

    kind 0 gives the stiffness matrix, kind 1 the mass matrix.
    """
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rows = np.empty(9 * nt, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cols = np.empty(9 * nt, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.empty(9 * nt, dtype=np.float64)
    cdef Py_ssize_t t, i, j, p
    cdef long v0, v1, v2
    cdef double x0, y0, x1, y1, x2, y2, det, area, w
    cdef double gx[3]
    cdef double gy[3]
    cdef long vv[3]
    for t in range(nt):
        v0 = triangles[t, 0]
        v1 = triangles[t, 1]
        v2 = triangles[t, 2]
        vv[0] = v0
        vv[1] = v1
        vv[2] = v2
        x0 = vertices[v0, 0]; y0 = vertices[v0, 1]
        x1 = vertices[v1, 0]; y1 = vertices[v1, 1]
        x2 = vertices[v2, 0]; y2 = vertices[v2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        area = 0.5 * fabs(det)
        w = coef[t] * area
        if kind == 0:
            gx[0] = (y1 - y2) / det; gy[0] = (x2 - x1) / det
            gx[1] = (y2 - y0) / det; gy[1] = (x0 - x2) / det
            gx[2] = (y0 - y1) / det; gy[2] = (x1 - x0) / det
        p = 9 * t
        for i in range(3):
            for j in range(3):
                rows[p] = vv[i]
                cols[p] = vv[j]
                if kind == 0:
                    vals[p] = w * (gx[i] * gx[j] + gy[i] * gy[j])
                elif i == j:
                    vals[p] = w / 6.0
                else:
                    vals[p] = w / 12.0
                p += 1
    return rows, cols, vals


def element_energy(double[:, ::1] vertices, long[:, ::1] triangles,
                   double[::1] coef, double[::1] u):
    """Per-triangle a*|grad u|^2*|t| for a nodal P1 vector ``u``."""
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(nt, dtype=np.float64)
    cdef Py_ssize_t t
    cdef long v0, v1, v2
    cdef double x0, y0, x1, y1, x2, y2, det, dx, dy, u0, u1, u2
    for t in range(nt):
        v0 = triangles[t, 0]
        v1 = triangles[t, 1]
        v2 = triangles[t, 2]
        x0 = vertices[v0, 0]; y0 = vertices[v0, 1]
        x1 = vertices[v1, 0]; y1 = vertices[v1, 1]
        x2 = vertices[v2, 0]; y2 = vertices[v2, 1]
        u0 = u[v0]; u1 = u[v1]; u2 = u[v2]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        dx = (u0 * (y1 - y2) + u1 * (y2 - y0) + u2 * (y0 - y1)) / det
        dy = (u0 * (x2 - x1) + u1 * (x0 - x2) + u2 * (x1 - x0)) / det
        out[t] = coef[t] * 0.5 * fabs(det) * (dx * dx + dy * dy)
    return out


cdef void _csr_matvec(long[::1] indptr, long[::1] indices, double[::1] data,
                      double[::1] x, double[::1] y) nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, p
    cdef double s
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        y[i] = s


def csr_matvec(long[::1] indptr, long[::1] indices, double[::1] data, double[::1] x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(indptr.shape[0] - 1)
    cdef double[::1] yv = y
    with nogil:
        _csr_matvec(indptr, indices, data, x, yv)
    return y


def pcg_jacobi(long[::1] indptr, long[::1] indices, double[::1] data,
               double[::1] b, double[::1] x0, double tol, int maxiter):
    """Jacobi-preconditioned CG on a CSR matrix.

    Returns (x, iterations, final relative residual). ``iterations`` is -1
    when the cap is hit before the residual drops below ``tol * |b|``.
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = xa
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] dinv = np.empty(n)
    cdef Py_ssize_t i, k
    cdef double bnorm = 0.0, rnorm, rz, rz_old, pq, alpha, beta
    cdef int it = -1
    with nogil:
        for i in range(n):
            dinv[i] = 1.0
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i and data[k] != 0.0:
                    dinv[i] = 1.0 / data[k]
            bnorm += b[i] * b[i]
        bnorm = sqrt(bnorm)
        if bnorm == 0.0:
            bnorm = 1.0
        _csr_matvec(indptr, indices, data, x, q)
        rz = 0.0
        rnorm = 0.0
        for i in range(n):
            r[i] = b[i] - q[i]
            z[i] = dinv[i] * r[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            rnorm += r[i] * r[i]
        rnorm = sqrt(rnorm)
        if rnorm <= tol * bnorm:
            it = 0
        else:
            for k in range(1, maxiter + 1):
                _csr_matvec(indptr, indices, data, p, q)
                pq = 0.0
                for i in range(n):
                    pq += p[i] * q[i]
                alpha = rz / pq
                rnorm = 0.0
                for i in range(n):
                    x[i] += alpha * p[i]
                    r[i] -= alpha * q[i]
                    rnorm += r[i] * r[i]
                rnorm = sqrt(rnorm)
                if rnorm <= tol * bnorm:
                    it = <int>k
                    break
                rz_old = rz
                rz = 0.0
                for i in range(n):
                    z[i] = dinv[i] * r[i]
                    rz += r[i] * z[i]
                beta = rz / rz_old
                for i in range(n):
                    p[i] = z[i] + beta * p[i]
    return xa, it, rnorm / bnorm
