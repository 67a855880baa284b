"""Desk-scale experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DepthFrame, add_depth_noise, intrinsics_from_fov, orbit_cameras, render_depth
from .fusion import TsdfVolume, fuse_frames
from .geometry import MeshSDF, TriangleMesh
from .grid import LatentGrid
from .inference import EncodeConfig, EncodeResult, encode_scene, query_sdf_batch
from .meshing import ExtractionConfig, LatticeStats, ObservationIndex, extract, grid_region, grid_source
from .metrics import completion
from .sampling import DISPLACEMENT_VOXELS, SdfSamples, samples_from_depth
from .shapes import PrimitiveShape, sample_surface, scene_sdf

BLOB_CENTERS = np.array([[0.0, 0.0, 0.0], [0.55, 0.2, 0.1], [-0.4, 0.35, -0.2], [0.1, -0.45, 0.3], [-0.2, -0.1, -0.5]])
BLOB_RADII = np.array([0.55, 0.4, 0.38, 0.33, 0.3])


def smooth_min(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b + (a - b) * h - k * h * (1.0 - h)


def blob_field(points, centers=BLOB_CENTERS, radii=BLOB_RADII, blend: float = 0.2) -> np.ndarray:
    """Smooth union of spheres (a bound on the true SDF, not exact)."""
    pts = np.atleast_2d(points)
    out = np.linalg.norm(pts - centers[0], axis=1) - radii[0]
    for c, r in zip(centers[1:], radii[1:]):
        out = smooth_min(out, np.linalg.norm(pts - c, axis=1) - r, blend)
    return out


def blob_mesh(resolution: float = 0.02) -> TriangleMesh:
    """The held-out test object; its ground-truth SDF is the exact mesh SDF."""
    lo = (BLOB_CENTERS - BLOB_RADII[:, None]).min(axis=0) - 0.1
    hi = (BLOB_CENTERS + BLOB_RADII[:, None]).max(axis=0) + 0.1
    return extract(blob_field, (lo, hi), ExtractionConfig(resolution)).welded()


# -- border consistency ------------------------------------------------------


def face_disagreement(decoder, grid, n_per_face: int = 16, seed: int = 0, gt_sdf=None, band: float | None = None):
    """|difference| between the two codes' decodes on shared faces of adjacent voxels.

    Points are uniform on each shared face. With ``gt_sdf`` and ``band`` only
    points whose true distance is within ``band`` are kept.
    """
    from .inference import decoder_for_grid
    from .decoder import decode_tanh

    dec = decoder_for_grid(decoder, grid)
    rng = np.random.default_rng(seed)
    out = []
    for axis in range(3):
        step = np.zeros(3, dtype=np.int64)
        step[axis] = 1
        nb = grid.rows_for_indices(grid.indices + step)
        a = np.nonzero(nb >= 0)[0]
        if not len(a):
            continue
        b = nb[a]
        uv = rng.uniform(-0.5, 0.5, size=(len(a), n_per_face, 3))
        uv[..., axis] = 0.5
        local_a = (uv * grid.voxel_size).reshape(-1, 3)
        local_b = local_a.copy()
        local_b[:, axis] -= grid.voxel_size
        rows_a = np.repeat(a, n_per_face)
        rows_b = np.repeat(b, n_per_face)
        pa = dec.output_scale * decode_tanh(dec, local_a, grid.codes[rows_a]).astype(np.float64)
        pb = dec.output_scale * decode_tanh(dec, local_b, grid.codes[rows_b]).astype(np.float64)
        diff = np.abs(pa - pb)
        if gt_sdf is not None and band is not None:
            world = grid.center(grid.indices[rows_a]) + local_a
            diff = diff[np.abs(gt_sdf(world)) <= band]
        out.append(diff)
    return np.concatenate(out) if out else np.zeros(0)


# -- synthetic scans -----------------------------------------------------------


@dataclass
class ScanSetup:
    radius: float = 1.0
    n_views: int = 8
    image_size: int = 96
    fov_deg: float = 50.0
    distance: float = 3.0
    elevation_deg: float = 30.0


def sphere_scene(setup: ScanSetup) -> list[PrimitiveShape]:
    return [PrimitiveShape("sphere", (setup.radius,))]


def render_scans(shapes, setup: ScanSetup, noise: float = 0.0, seed: int = 0, views=None) -> list[DepthFrame]:
    """Depth frames from an orbit of cameras; ``views`` selects a subset of the orbit."""
    fx, fy, cx, cy = intrinsics_from_fov(setup.image_size, setup.image_size, setup.fov_deg)
    poses = orbit_cameras(setup.n_views, setup.distance, elevation_deg=setup.elevation_deg)
    if views is not None:
        poses = [poses[i] for i in views]
    rng = np.random.default_rng(seed)
    frames = []
    for pose in poses:
        frame = render_depth(shapes, setup.image_size, setup.image_size, fx, fy, cx, cy, pose)
        frames.append(add_depth_noise(frame, noise, rng) if noise > 0 else frame)
    return frames


def min_depth(frames) -> float:
    return float(min(f.depth[f.depth > 0].min() for f in frames if np.any(f.depth > 0)))


def scan_samples(frames, voxel_size: float, truncation: float | None = None) -> SdfSamples:
    """Samples from every frame with a shared depth reference for the weights."""
    truncation = 2.0 * voxel_size if truncation is None else truncation
    z_ref = min_depth(frames)
    parts = [
        samples_from_depth(f, DISPLACEMENT_VOXELS * voxel_size, voxel_size, truncation, z_ref) for f in frames
    ]
    return SdfSamples.concat(parts)


def scan_points(frames) -> np.ndarray:
    pts = [f.backproject()[f.valid_mask()] for f in frames]
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def deepls_from_samples(decoder, samples: SdfSamples, voxel_size: float, config: EncodeConfig | None = None,
                        receptive_factor: float = 1.5, band: float = 0.5) -> EncodeResult:
    """Allocate voxels around near-surface samples and encode them."""
    grid = LatentGrid(voxel_size, decoder.code_dim, receptive_radius_factor=receptive_factor)
    grid.allocate(samples.near_surface(band * voxel_size))
    return encode_scene(decoder, grid, samples, config)


def fusion_from_scans(frames, lo, hi, voxel_size: float, truncation: float | None = None) -> TsdfVolume:
    return fuse_frames(frames, lo, hi, voxel_size, truncation, z_ref=min_depth(frames))


def sphere_surface_points(shape: PrimitiveShape, n: int, seed: int) -> np.ndarray:
    return sample_surface(shape, n, np.random.default_rng(seed))


def shell_probes(shapes, n: int, band: float, seed: int) -> np.ndarray:
    """Points displaced from the surface along the normal by U(-band, band)."""
    rng = np.random.default_rng(seed)
    per = [n // len(shapes)] * len(shapes)
    pts = []
    for shape, k in zip(shapes, per):
        p = sample_surface(shape, k, rng)
        eps = 1e-6
        g = np.stack([
            (scene_sdf([shape], p + eps * e) - scene_sdf([shape], p - eps * e)) / (2 * eps) for e in np.eye(3)
        ], axis=1)
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pts.append(p + g * rng.uniform(-band, band, (k, 1)))
    return np.concatenate(pts)


def rmse_where_both(shapes, probes, *sources) -> tuple[list[float], int]:
    """RMSE of each source against the analytic SDF over probes where every source is defined."""
    vals = [np.asarray(src(probes), dtype=np.float64) for src in sources]
    ok = np.all([np.isfinite(v) for v in vals], axis=0)
    if not ok.any():
        raise ValueError("no probe is defined for every source")
    truth = scene_sdf(shapes, probes[ok])
    return [float(np.sqrt(np.mean((v[ok] - truth) ** 2))) for v in vals], int(ok.sum())


# -- extraction mask sweep -----------------------------------------------------


def mask_sweep(source, region, resolution: float, observations, radii, gt_points, threshold: float):
    """Completion and masked-cell counts for increasing mask radii on a fixed lattice.

    Completion uses mesh vertices, which form nested sets as the radius grows.
    """
    index = ObservationIndex(observations)
    rows = []
    for radius in radii:
        stats = LatticeStats()
        mesh = extract(source, region, ExtractionConfig(resolution, radius), index, stats)
        rows.append({
            "mask_radius": float(radius),
            "completion": completion(gt_points, mesh.vertices, threshold),
            "masked_cells": stats.masked_cells,
            "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles),
        })
    return rows
