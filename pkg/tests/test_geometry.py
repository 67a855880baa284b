import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepls.geometry import MeshSDF, TriangleMesh, closest_point_on_triangles, icosphere, inside_by_parity, raycast_mesh


def cube_mesh(h=0.5):
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(tris))


def box_sdf(p, h=0.5):
    q = np.abs(p) - h
    return np.linalg.norm(np.maximum(q, 0), axis=1) + np.minimum(q.max(axis=1), 0)


def test_cube_is_outward_closed():
    m = cube_mesh()
    assert m.euler_characteristic() == 2
    c = sum(m.corners) / 3
    assert np.all(np.einsum("ij,ij->i", m.face_normals(), c) > 0)


def test_icosphere_properties():
    m = icosphere(3, radius=2.0, center=(1.0, 0.0, 0.0))
    assert len(m) == 1280 and m.euler_characteristic() == 2
    np.testing.assert_allclose(np.linalg.norm(m.vertices - [1.0, 0, 0], axis=1), 2.0)


def test_index_out_of_range():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_mesh_sdf_cube_exact(rng):
    sdf = MeshSDF(cube_mesh())
    p = rng.uniform(-1.2, 1.2, (2000, 3))
    np.testing.assert_allclose(sdf(p), box_sdf(p), atol=1e-12)


@given(st.integers(0, 10**6))
def test_mesh_sdf_distance_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = icosphere(2)
    sdf = MeshSDF(m)
    p = rng.uniform(-3, 3, (50, 3))
    a, b, c = m.corners
    n = len(m)
    cp, _ = closest_point_on_triangles(np.repeat(p, n, axis=0), np.tile(a, (50, 1)), np.tile(b, (50, 1)),
                                       np.tile(c, (50, 1)))
    brute = np.linalg.norm(np.repeat(p, n, axis=0) - cp, axis=1).reshape(50, n).min(axis=1)
    got = np.abs(sdf(p))
    np.testing.assert_allclose(got, brute, rtol=0, atol=1e-12)
    assert np.all((sdf(p) < 0) == inside_by_parity(m, p))


def test_welding_closes_split_vertices():
    m = cube_mesh()
    # duplicate every corner per face so nothing is shared
    v = m.vertices[m.triangles.ravel()]
    split = TriangleMesh(v, np.arange(len(v)).reshape(-1, 3))
    assert split.euler_characteristic() != 2
    assert split.welded().euler_characteristic() == 2


def test_raycast_hits_cube():
    t = raycast_mesh(cube_mesh(), np.array([[0.0, 0.0, -3.0]]), np.array([[0, 0, 1.0], [1.0, 0, 0]]))
    assert t[0] == pytest.approx(2.5) and np.isinf(t[1])


def test_surface_sampling_area_uniform():
    m = cube_mesh()
    pts, normals = m.sample_surface(60000, np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(box_sdf(pts)), 0, atol=1e-12)
    counts = np.array([(np.abs(normals[:, k]) > 0.5).sum() for k in range(3)])
    np.testing.assert_allclose(counts / 60000, 1 / 3, atol=0.01)
