import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lodlab.mesh import (MeshError, build_hierarchy, build_uniform, element_neighborhood,
                         element_patch, nodal_patch)


def test_smallest_meshes():
    m1 = build_uniform(1)
    assert (m1.num_triangles, m1.num_vertices, len(m1.interior_vertices)) == (2, 4, 0)
    m2 = build_uniform(2)
    assert (m2.num_triangles, m2.num_vertices, len(m2.interior_vertices)) == (8, 9, 1)


def test_reference_mesh_size():
    m = build_uniform(256)
    assert m.num_triangles == 131072
    assert m.mesh_size == pytest.approx(2.0 ** -8 * np.sqrt(2))


def test_zero_subdivisions_rejected():
    with pytest.raises(MeshError):
        build_uniform(0)


@given(st.integers(1, 12))
def test_triangulation_invariants(n):
    m = build_uniform(n)
    assert np.allclose(m.areas, 1 / (2 * n * n))
    assert np.allclose(m.vertices * n, np.round(m.vertices * n))
    on_edge = np.isclose(m.vertices, 0).any(axis=1) | np.isclose(m.vertices, 1).any(axis=1)
    assert np.array_equal(on_edge, m.boundary_vertex)
    assert m.check_conforming()
    # one diagonal direction everywhere: each triangle has the lower-left and upper-right corner
    p = m.vertices[m.triangles]
    lo, hi = p.min(axis=1), p.max(axis=1)
    has = lambda c: np.isclose(p, c[:, None, :]).all(axis=2).any(axis=1)
    assert has(lo).all() and has(hi).all()


def test_nonconforming_mesh_detected():
    m = build_uniform(2)
    bad = m.triangles.copy()
    bad[0] = [0, 1, 5]
    broken = type(m)(m.n, m.vertices, bad, m.boundary_vertex)
    assert not broken.check_conforming()


def test_hierarchy_children():
    h = build_hierarchy(2, 2, 4)
    assert h.child_map.shape == (8, 4)
    assert np.array_equal(np.sort(h.child_map.ravel()), np.arange(h.fine.num_triangles))


def test_hierarchy_rejects_non_nested_levels():
    with pytest.raises(MeshError, match="3 does not divide 8"):
        build_hierarchy(3, 8, 16)
    with pytest.raises(MeshError, match="8 does not divide 12"):
        build_hierarchy(2, 8, 12)


def _hat(x, y, zx, zy, n):
    """Closed form of the coarse hat at (zx, zy) for the lower-left/upper-right diagonal."""
    u, v = n * (x - zx), n * (y - zy)
    return np.maximum(0.0, 1 - np.maximum.reduce([np.abs(u), np.abs(v), np.abs(u - v)]))


def test_prolongation_matches_closed_form_hats():
    h = build_hierarchy(4, 8, 32)
    P = h.prolongation.toarray()
    for z in range(h.coarse.num_vertices):
        zx, zy = h.coarse.vertices[z]
        ref = _hat(h.fine.vertices[:, 0], h.fine.vertices[:, 1], zx, zy, 4)
        assert np.abs(P[:, z] - ref).max() <= 1e-14
    lattice = np.isclose((h.fine.vertices * 4) % 1, 0).all(axis=1)
    assert (np.count_nonzero(P[~lattice], axis=1) <= 3).all()


def test_prolonged_single_hat_peaks_at_center():
    h = build_hierarchy(2, 4, 8)
    z = h.coarse.vertex_index(0.5, 0.5)
    col = h.prolongation[:, z].toarray().ravel()
    assert col[h.fine.vertex_index(0.5, 0.5)] == 1.0


def test_prolongation_partition_of_unity():
    h = build_hierarchy(4, 8, 32)
    assert np.allclose(np.asarray(h.prolongation.sum(axis=1)).ravel(), 1.0, atol=1e-14)


def test_nodal_patch_sizes():
    h = build_hierarchy(4, 4, 8)
    # the vertex star has six triangles with a single diagonal direction
    assert len(nodal_patch(h, h.coarse.vertex_index(0.25, 0.25), 1)) == 6
    assert len(nodal_patch(h, h.coarse.vertex_index(0.5, 0.5), 1)) == 6
    for z in h.coarse_interior:
        assert len(nodal_patch(h, int(z), 8)) == 32


def test_nodal_patch_on_two_by_two():
    h = build_hierarchy(2, 2, 4)
    z = h.coarse.vertex_index(0.5, 0.5)
    assert len(nodal_patch(h, z, 1)) == 6
    assert len(nodal_patch(h, z, 2)) == 8


def test_nodal_patch_rejects_boundary_vertex_and_bad_order():
    h = build_hierarchy(4, 4, 8)
    with pytest.raises(MeshError, match="boundary"):
        nodal_patch(h, 0, 1)
    with pytest.raises(MeshError):
        nodal_patch(h, 6, 0)


def test_element_patches():
    h = build_hierarchy(4, 4, 8)
    assert element_patch(h, 10, 1).coarse_triangles.tolist() == [10]
    T = 2 * (1 * 4 + 1)  # lower triangle of cell (1, 1)
    p2 = element_patch(h, T, 2)
    verts = set(h.coarse.triangles[T])
    expected = [t for t in range(32) if verts & set(h.coarse.triangles[t])]
    assert p2.coarse_triangles.tolist() == expected
    assert len(element_patch(h, T, 10)) == 32
    with pytest.raises(MeshError):
        element_patch(h, 32, 1)


def test_element_neighborhood():
    h2 = build_hierarchy(2, 2, 4)
    # with a single diagonal direction, no neighborhood covers the 2x2 mesh
    assert max(len(element_neighborhood(h2, T)) for T in range(8)) < 8
    for T in range(8):
        verts = set(h2.coarse.triangles[T])
        expected = [t for t in range(8) if verts & set(h2.coarse.triangles[t])]
        assert element_neighborhood(h2, T).coarse_triangles.tolist() == expected
    h4 = build_hierarchy(4, 4, 8)
    corner = len(element_neighborhood(h4, 0))
    inner = len(element_neighborhood(h4, 2 * (1 * 4 + 1)))
    assert corner < inner
    for T in range(32):
        assert T in element_neighborhood(h4, T).coarse_triangles


@given(st.sampled_from([2, 4, 8]), st.integers(1, 6), st.data())
def test_patch_monotone_and_saturating(n_H, k, data):
    h = build_hierarchy(n_H, n_H, 2 * n_H)
    z = int(data.draw(st.sampled_from(h.coarse_interior.tolist())))
    a, b = nodal_patch(h, z, k), nodal_patch(h, z, k + 1)
    assert set(a.coarse_triangles) <= set(b.coarse_triangles)
    assert set(a.fine_vertices_interior) <= set(b.fine_vertices_interior)
    assert len(nodal_patch(h, z, 2 * n_H)) == h.coarse.num_triangles


def test_patch_fine_vertices_exclude_patch_boundary():
    h = build_hierarchy(4, 4, 16)
    p = nodal_patch(h, h.coarse.vertex_index(0.5, 0.5), 1)
    verts = h.fine.vertices[p.fine_vertices_interior]
    # star of (1/2, 1/2) is the hexagon |u|, |v|, |u - v| < 1/4 around the center
    u, v = verts[:, 0] - 0.5, verts[:, 1] - 0.5
    assert np.all(np.maximum.reduce([abs(u), abs(v), abs(u - v)]) < 0.25 - 1e-12)
    assert len(verts) == 3 * 4 * 3 + 1
