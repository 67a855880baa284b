import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepls.experiments import mask_sweep
from deepls.meshing import ExtractionConfig, LatticeStats, ObservationIndex, extract, nearest_observation_distance

UNIT_BOX = (np.full(3, -1.3), np.full(3, 1.3))


def sphere_sdf(p):
    return np.linalg.norm(p, axis=1) - 1.0


def test_sphere_vertices_accurate():
    mesh = extract(sphere_sdf, UNIT_BOX, ExtractionConfig(0.05))
    assert len(mesh) > 1000
    assert np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)) < 0.01


def test_sphere_topology_and_orientation():
    mesh = extract(sphere_sdf, UNIT_BOX, ExtractionConfig(0.05))
    assert mesh.euler_characteristic() == 2
    centroids = sum(mesh.corners) / 3
    n = mesh.face_normals()
    nondegenerate = mesh.areas() > 1e-12
    assert np.all(np.einsum("ij,ij->i", n, centroids)[nondegenerate] > 0)


def test_constant_field_is_empty():
    assert len(extract(lambda p: np.ones(len(p)), UNIT_BOX, ExtractionConfig(0.1))) == 0


def test_unavailable_values_skip_cells():
    half = lambda p: np.where(p[:, 0] > 0, sphere_sdf(p), np.nan)  # noqa: E731
    stats = LatticeStats()
    mesh = extract(half, UNIT_BOX, ExtractionConfig(0.1), stats=stats)
    assert len(mesh) > 0 and np.all(mesh.vertices[:, 0] > 0)
    assert stats.unavailable_cells > 0


def test_mask_yields_vertex_subset():
    rng = np.random.default_rng(0)
    obs = rng.standard_normal((300, 3))
    obs = obs / np.linalg.norm(obs, axis=1, keepdims=True)
    obs = obs[obs[:, 2] > 0.3]
    full = extract(sphere_sdf, UNIT_BOX, ExtractionConfig(0.1))
    masked = extract(sphere_sdf, UNIT_BOX, ExtractionConfig(0.1, mask_radius=0.3), obs)
    assert 0 < len(masked.vertices) < len(full.vertices)
    full_set = {tuple(v) for v in full.vertices}
    assert all(tuple(v) in full_set for v in masked.vertices)


def test_mask_sweep_monotone():
    rng = np.random.default_rng(1)
    obs = rng.standard_normal((200, 3))
    obs = obs / np.linalg.norm(obs, axis=1, keepdims=True)
    obs = obs[obs[:, 0] > 0]
    gt = rng.standard_normal((2000, 3))
    gt /= np.linalg.norm(gt, axis=1, keepdims=True)
    rows = mask_sweep(sphere_sdf, UNIT_BOX, 0.1, obs, [0.05, 0.1, 0.2, 0.4, 0.8, np.inf], gt, 0.1)
    comp = [r["completion"] for r in rows]
    masked = [r["masked_cells"] for r in rows]
    assert all(b >= a for a, b in zip(comp, comp[1:]))
    assert all(b <= a for a, b in zip(masked, masked[1:]))
    assert masked[-1] == 0


@pytest.mark.parametrize("kw", [dict(sample_resolution=0.0), dict(sample_resolution=0.1, mask_radius=0.0)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        ExtractionConfig(**kw)


def test_nearest_observation_basics():
    p = np.array([[1.0, 2.0, 3.0]])
    assert nearest_observation_distance(p, np.array([1.0, 2.0, 3.0])) == 0.0
    assert nearest_observation_distance(p, np.array([1.0, 2.0, 5.0])) == 2.0
    assert nearest_observation_distance(np.zeros((0, 3)), np.zeros(3)) == np.inf


@given(st.integers(0, 10**6))
def test_nearest_observation_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (1000, 3))
    q = rng.uniform(-1.5, 1.5, (100, 3))
    brute = np.sqrt(((q[:, None, :] - pts[None]) ** 2).sum(-1)).min(axis=1)
    np.testing.assert_array_equal(ObservationIndex(pts).distance(q), brute)
