"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 256] [--repeat 5]

Both backends get identical inputs; results are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from lodlab import _kernels_py, fem, kernels
from lodlab.mesh import build_uniform

try:
    from lodlab import _kernels as _compiled
except ImportError:
    _compiled = None


def _cases(n):
    mesh = build_uniform(n)
    rng = np.random.default_rng(0)
    coef = rng.uniform(1.0, 1e3, mesh.num_triangles)
    u = rng.standard_normal(mesh.num_vertices)
    K = fem.assemble_stiffness(mesh, coef)
    b = rng.standard_normal(K.shape[0])
    x = rng.standard_normal(K.shape[0])
    v, t = mesh.vertices, mesh.triangles
    return {
        "p1_triplets(stiffness)": lambda impl: kernels.p1_triplets(v, t, coef, "stiffness", impl=impl),
        "p1_triplets(mass)": lambda impl: kernels.p1_triplets(v, t, coef, "mass", impl=impl),
        "element_energy": lambda impl: kernels.element_energy(v, t, coef, u, impl=impl),
        "csr_matvec": lambda impl: kernels.csr_matvec(K, x, impl=impl),
        "pcg_jacobi(200 it)": lambda impl: kernels.pcg_jacobi(K, b, tol=1e-30, maxiter=200, impl=impl),
    }


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=256, help="mesh subdivisions per axis")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"mesh n={args.n}, best of {args.repeat}")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, fn in _cases(args.n).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if _compiled is None:
            print(f"{name:<24}{1e3 * t_py:>12.2f}{'-':>13}{'-':>9}")
            continue
        a, b = _first(fn(_kernels_py)), _first(fn(_compiled))
        if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_cy = min(timeit.repeat(lambda: fn(_compiled), number=1, repeat=args.repeat))
        print(f"{name:<24}{1e3 * t_py:>12.2f}{1e3 * t_cy:>13.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
