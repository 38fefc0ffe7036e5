"""Hot-loop kernels, compiled when available.

The Cython extension ``lodlab._kernels`` is used if it was built at install
time; otherwise the numpy versions from ``lodlab._kernels_py`` are used.
Setting ``LODLAB_PURE=1`` forces the numpy path.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "numpy"
_impl = _kernels_py
if not os.environ.get("LODLAB_PURE"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _prep(vertices, triangles):
    return (np.ascontiguousarray(vertices, dtype=np.float64),
            np.ascontiguousarray(triangles, dtype=np.int64))


def p1_triplets(vertices, triangles, coef, kind, impl=None):
    """COO triplets ``(rows, cols, vals)``; ``kind`` is ``"stiffness"`` or ``"mass"``."""
    impl = impl or _impl
    v, t = _prep(vertices, triangles)
    code = {"stiffness": 0, "mass": 1}[kind]
    return impl.p1_triplets(v, t, np.ascontiguousarray(coef, dtype=np.float64), code)


def element_energy(vertices, triangles, coef, u, impl=None):
    impl = impl or _impl
    v, t = _prep(vertices, triangles)
    return impl.element_energy(v, t, np.ascontiguousarray(coef, dtype=np.float64),
                               np.ascontiguousarray(u, dtype=np.float64))


def pcg_jacobi(A, b, x0=None, tol=1e-10, maxiter=10000, impl=None):
    """Jacobi-preconditioned CG on a scipy CSR matrix."""
    impl = impl or _impl
    A = A.tocsr()
    b = np.ascontiguousarray(b, dtype=np.float64)
    x0 = np.zeros_like(b) if x0 is None else np.ascontiguousarray(x0, dtype=np.float64)
    return impl.pcg_jacobi(A.indptr.astype(np.int64), A.indices.astype(np.int64),
                           np.ascontiguousarray(A.data, dtype=np.float64), b, x0,
                           float(tol), int(maxiter))


def csr_matvec(A, x, impl=None):
    impl = impl or _impl
    A = A.tocsr()
    return impl.csr_matvec(A.indptr.astype(np.int64), A.indices.astype(np.int64),
                           np.ascontiguousarray(A.data, dtype=np.float64),
                           np.ascontiguousarray(x, dtype=np.float64))
