"""SDF sample generation from primitives, meshes and depth frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DepthFrame
from .geometry import MeshSDF, TriangleMesh
from .mlp import ContractError
from .shapes import PrimitiveShape, primitive_sdf, sample_surface

MIN_DEPTH_WEIGHT = 0.05
# two-scale surface perturbation, fractions of the bounding-box diagonal
MESH_SIGMAS = (0.005, 0.0005)
# displacement along normals for metric scenes; 1.5 cm relative to 5.6 cm blocks otherwise
DISPLACEMENT_M = 0.015
DISPLACEMENT_VOXELS = 0.015 / 0.056


@dataclass
class SdfSamples:
    """Struct-of-arrays sample set: positions, truncated SDF targets, weights."""

    positions: np.ndarray
    sdf: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        n = len(self.positions)
        self.weights = (
            np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=np.float64).reshape(-1)
        )
        if len(self.sdf) != n or len(self.weights) != n:
            raise ContractError("positions, sdf and weights differ in length")

    def __len__(self) -> int:
        return len(self.sdf)

    @classmethod
    def empty(cls) -> "SdfSamples":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, parts) -> "SdfSamples":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.sdf for p in parts]),
            np.concatenate([p.weights for p in parts]),
        )

    def subset(self, idx) -> "SdfSamples":
        return SdfSamples(self.positions[idx], self.sdf[idx], self.weights[idx])

    def clamped(self, truncation: float) -> "SdfSamples":
        return SdfSamples(self.positions, np.clip(self.sdf, -truncation, truncation), self.weights)

    def near_surface(self, band: float) -> np.ndarray:
        return self.positions[np.abs(self.sdf) <= band]


def weight_for_depth(z, z_ref: float, w_min: float = MIN_DEPTH_WEIGHT):
    """Inverse-depth confidence ``clamp(z_ref / z, w_min, 1)``."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ContractError("depth must be positive for weighting")
    w = np.clip(z_ref / z, w_min, 1.0)
    return float(w) if w.ndim == 0 else w


def estimate_normals(frame: DepthFrame, max_rel_jump: float = 0.1):
    """Per-pixel normals from central differences of back-projected points.

    Normals face the camera. Border pixels, pixels with an invalid neighbour
    and pixels across a depth jump larger than ``max_rel_jump * z`` are NaN.
    """
    pts = frame.backproject()
    z = frame.depth.astype(np.float64)
    normals = np.full_like(pts, np.nan)
    h, w = z.shape
    if h < 3 or w < 3:
        return pts, normals
    c = z[1:-1, 1:-1]
    left, right, up, down = z[1:-1, :-2], z[1:-1, 2:], z[:-2, 1:-1], z[2:, 1:-1]
    ok = (c > 0) & (left > 0) & (right > 0) & (up > 0) & (down > 0)
    jump = max_rel_jump * c
    ok &= (np.abs(left - c) < jump) & (np.abs(right - c) < jump)
    ok &= (np.abs(up - c) < jump) & (np.abs(down - c) < jump)
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    ok &= length[..., 0] > 0
    n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
    to_cam = frame.camera_center - pts[1:-1, 1:-1]
    flip = np.einsum("...j,...j->...", n, to_cam) < 0
    n[flip] *= -1
    inner = normals[1:-1, 1:-1]
    inner[ok] = n[ok]
    return pts, normals


def samples_from_depth(
    frame: DepthFrame,
    displacement: float,
    free_space_step: float,
    truncation: float,
    z_ref: float | None = None,
    max_free_space: int | None = 4,
    max_rel_jump: float = 0.1,
) -> SdfSamples:
    """Zero, +/- displaced and free-space samples from one depth frame.

    Only pixels with a valid normal contribute. Free-space samples are spaced
    ``free_space_step`` apart on the ray, starting one truncation in front of
    the surface and walking toward the camera (at most ``max_free_space`` per
    ray; None walks all the way). Weights follow the pixel depth.
    """
    pts, normals = estimate_normals(frame, max_rel_jump)
    ok = np.all(np.isfinite(normals), axis=-1)
    if not ok.any():
        return SdfSamples.empty()
    p = pts[ok]
    n = normals[ok]
    z = frame.depth[ok].astype(np.float64)
    if z_ref is None:
        z_ref = float(z.min())
    w = weight_for_depth(z, z_ref)
    d = float(displacement)
    positions = [p, p + d * n, p - d * n]
    sdf = [np.zeros(len(p)), np.full(len(p), d), np.full(len(p), -d)]
    weights = [w, w, w]

    cam = frame.camera_center
    to_cam = cam - p
    ray_len = np.linalg.norm(to_cam, axis=1)
    u = to_cam / ray_len[:, None]
    if free_space_step > 0:
        n_free = np.floor((ray_len - truncation) / free_space_step).astype(np.int64) + 1
        n_free = np.maximum(n_free, 0)
        if max_free_space is not None:
            n_free = np.minimum(n_free, max_free_space)
        for k in range(int(n_free.max(initial=0))):
            m = n_free > k
            dist = truncation + k * free_space_step
            positions.append(p[m] + dist * u[m])
            sdf.append(np.full(m.sum(), min(dist, truncation)))
            weights.append(w[m])
    return SdfSamples(np.concatenate(positions), np.concatenate(sdf), np.concatenate(weights))


def sample_mesh(
    mesh: TriangleMesh,
    n_surface: int,
    n_uniform: int,
    seed: int,
    sigmas=MESH_SIGMAS,
    padding: float = 0.05,
    sdf_fn=None,
) -> SdfSamples:
    """Near-surface (two Gaussian scales) plus bounding-box samples of a mesh.

    SDF values are signed closest-triangle distances; pass ``sdf_fn`` to reuse
    a prebuilt :class:`MeshSDF`.
    """
    if len(mesh) == 0:
        raise ContractError("cannot sample an empty mesh")
    if n_surface + n_uniform == 0:
        return SdfSamples.empty()
    rng = np.random.default_rng(seed)
    diag = mesh.bbox_diagonal()
    parts = []
    if n_surface:
        pts, _ = mesh.sample_surface(n_surface, rng)
        scale = np.where(np.arange(n_surface) % 2 == 0, sigmas[0], sigmas[1]) * diag
        parts.append(pts + rng.standard_normal((n_surface, 3)) * scale[:, None])
    if n_uniform:
        lo, hi = mesh.bounds()
        pad = padding * diag
        parts.append(rng.uniform(lo - pad, hi + pad, size=(n_uniform, 3)))
    positions = np.concatenate(parts)
    sdf_fn = sdf_fn or MeshSDF(mesh)
    return SdfSamples(positions, sdf_fn(positions), None)


def sample_primitive(
    shape: PrimitiveShape,
    n_surface: int,
    rng: np.random.Generator,
    sigmas=(0.3, 0.05),
    n_uniform: int = 0,
    uniform_pad: float = 1.5,
) -> SdfSamples:
    """Analytic samples around one primitive: surface points perturbed at two
    absolute scales, plus optional uniform points in the padded bounding ball."""
    pts = sample_surface(shape, n_surface, rng)
    scale = np.where(np.arange(n_surface) % 2 == 0, sigmas[0], sigmas[1])
    pos = [pts + rng.standard_normal((n_surface, 3)) * scale[:, None]]
    if n_uniform:
        r = shape.bounding_radius() + uniform_pad
        pos.append(shape.pose[:3, 3] + rng.uniform(-r, r, size=(n_uniform, 3)))
    pos = np.concatenate(pos)
    return SdfSamples(pos, primitive_sdf(shape, pos), None)
