import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lodlab import fem
from lodlab.coefficient import make_blocks, sample_coefficient
from lodlab.mesh import build_hierarchy, build_uniform


def _hat_center(x, y, n=2):
    u, v = n * (x - 0.5), n * (y - 0.5)
    return np.maximum(0.0, 1 - np.maximum.reduce([np.abs(u), np.abs(v), np.abs(u - v)]))


def _grid_integral(f, m=2000):
    """Midpoint rule on an m x m grid of the unit square."""
    t = (np.arange(m) + 0.5) / m
    x, y = np.meshgrid(t, t)
    return float(f(x, y).mean())


# frozen values for the single interior dof of the n=2 mesh (six-triangle star)
MASS_N2 = 1 / 8
LOAD_N2 = 1 / 4
U_N2 = 1 / 16


def test_frozen_values_match_quadrature_oracle():
    assert _grid_integral(lambda x, y: _hat_center(x, y) ** 2) == pytest.approx(MASS_N2, rel=1e-5)
    assert _grid_integral(_hat_center) == pytest.approx(LOAD_N2, rel=1e-5)


def test_two_by_two_system():
    m = build_uniform(2)
    K = fem.assemble_stiffness(m, 1.0).toarray()
    M = fem.assemble_weighted_mass(m, 1.0).toarray()
    f = fem.assemble_load(m, 1.0)
    assert K.shape == (1, 1) and K[0, 0] == pytest.approx(4.0, abs=1e-14)
    assert M[0, 0] == pytest.approx(MASS_N2, abs=1e-15)
    assert f[0] == pytest.approx(LOAD_N2, abs=1e-15)
    u = fem.solve_reference(m, 1.0, 1.0)
    assert u[0] == pytest.approx(U_N2, abs=1e-15)


def test_stiffness_is_five_point_stencil_for_unit_coefficient():
    n = 6
    K = fem.assemble_stiffness(build_uniform(n), 1.0).toarray()
    m = n - 1
    T = 2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
    ref = np.kron(np.eye(m), T) + np.kron(T, np.eye(m))
    assert np.abs(K - ref).max() <= 1e-13


@given(st.floats(1e-3, 1e3))
def test_scaling_is_linear(s):
    m = build_uniform(4)
    a = np.random.default_rng(0).uniform(1, 10, m.num_triangles)
    for asm in (fem.assemble_stiffness, fem.assemble_weighted_mass):
        assert np.abs(asm(m, s * a) - s * asm(m, a)).max() <= 1e-12 * s * abs(asm(m, a)).max()


def test_stiffness_symmetric_and_neumann_kernel_is_constants():
    m = build_uniform(5)
    a = np.random.default_rng(1).uniform(1, 1e4, m.num_triangles)
    K = fem.assemble_stiffness(m, a)
    assert abs(K - K.T).max() == 0.0
    Kn = fem.assemble_stiffness(m, a, interior=False).toarray()
    assert np.abs(Kn @ np.ones(len(Kn))).max() <= 1e-10 * np.abs(Kn).max()
    w = np.linalg.eigvalsh(Kn)
    assert abs(w[0]) <= 1e-10 * w[-1] and w[1] > 1e-6 * w[-1]


def test_mass_row_sums_are_hat_integrals():
    n = 4
    m = build_uniform(n)
    M = fem.assemble_weighted_mass(m, 1.0, interior=False)
    rows = np.asarray(M.sum(axis=1)).ravel()
    assert rows.sum() == pytest.approx(1.0, abs=1e-14)
    z = m.vertex_index(0.5, 0.5)
    assert rows[z] == pytest.approx(_grid_integral(lambda x, y: _hat_center(x, y, n)), rel=1e-5)


def test_nonpositive_coefficient_rejected():
    m = build_uniform(2)
    a = np.ones(m.num_triangles)
    a[3] = 0.0
    with pytest.raises(fem.FEMError, match="triangle 3"):
        fem.assemble_stiffness(m, a)


def test_load_vectors():
    m = build_uniform(8)
    assert not fem.assemble_load(m, 0.0).any()
    assert fem.assemble_load(m, 1.0, interior=False).sum() == pytest.approx(1.0, abs=1e-14)
    f = fem.assemble_load(m, "spe-corners", interior=False)
    touched = np.zeros(m.num_vertices, bool)
    in_corner = ((m.centroids < 0.25).all(axis=1)) | ((m.centroids > 0.75).all(axis=1))
    touched[m.triangles[in_corner].ravel()] = True
    assert np.array_equal(f != 0, touched)
    assert f.sum() == pytest.approx(8 * 2 / 16)


def test_reference_solution_identities():
    h = build_hierarchy(4, 32, 128)
    ec = sample_coefficient(make_blocks(1e6), h)
    assert not fem.solve_reference(h, ec, 0.0).any()
    u = fem.solve_reference(h, ec, "half-step")
    K = fem.assemble_stiffness(h.fine, ec.fine)
    f = fem.assemble_load(h.fine, "half-step")
    r = K @ u - f
    # at contrast 1e6 the attainable residual is a few 1e-8 |f| (rounding floor)
    assert np.linalg.norm(r) <= 1e-7 * np.linalg.norm(f)
    assert abs(u @ (K @ u) - f @ u) <= np.linalg.norm(u) * np.linalg.norm(r) * (1 + 1e-12)
    assert u @ (K @ u) == pytest.approx(f @ u, rel=1e-8)


def test_reference_solution_tight_at_moderate_contrast():
    h = build_hierarchy(4, 32, 64)
    ec = sample_coefficient(make_blocks(10.0), h)
    u = fem.solve_reference(h, ec, "half-step")
    K = fem.assemble_stiffness(h.fine, ec.fine)
    f = fem.assemble_load(h.fine, "half-step")
    assert np.linalg.norm(K @ u - f) <= 1e-10 * np.linalg.norm(f)
    assert u @ (K @ u) == pytest.approx(f @ u, rel=1e-10)


def test_energy_grows_under_refinement():
    energies = []
    for n in (32, 64, 128):
        m = build_uniform(n)
        a = make_blocks(100.0).sample(m.centroids)
        u = fem.solve_reference(m, a, "half-step")
        energies.append(u @ fem.assemble_load(m, "half-step"))
    assert all(b >= a - 1e-14 for a, b in zip(energies, energies[1:]))


def test_energy_error():
    m = build_uniform(6)
    K = fem.assemble_stiffness(m, 1.0)
    rng = np.random.default_rng(2)
    u, v, w = rng.standard_normal((3, K.shape[0]))
    assert fem.energy_error(u, u, K) == 0.0
    assert fem.energy_error(u, 0 * u, K) == pytest.approx(np.sqrt(u @ K @ u))
    assert fem.energy_error(u, w, K) <= fem.energy_error(u, v, K) + fem.energy_error(v, w, K) + 1e-12
    assert fem.energy_error(u, v, K, relative=True) == pytest.approx(
        fem.energy_error(u, v, K) / np.sqrt(u @ K @ u))
    with pytest.raises(fem.FEMError):
        fem.energy_error(u, u[:-1], K)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_triangle_inequality_property(c):
    m = build_uniform(4)
    K = fem.assemble_stiffness(m, 1.0)
    rng = np.random.default_rng(5)
    base = rng.standard_normal((3, K.shape[0]))
    u, v, w = (ci * b for ci, b in zip(c, base))
    assert fem.energy_error(u, w, K) <= fem.energy_error(u, v, K) + fem.energy_error(v, w, K) + 1e-9
