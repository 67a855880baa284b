"""Pinhole depth frames: rendering synthetic scans and back-projection.

Camera frame convention: +z looks forward, +x right, +y down. Pixel ``(u, v)``
(column, row) sees the ray through ``((u - cx) / fx, (v - cy) / fy, 1)``.
``depth`` stores the z coordinate in the camera frame; 0 marks invalid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TriangleMesh, raycast_mesh
from .shapes import PrimitiveShape, scene_sdf, transform_points


def _f32(x) -> float:
    return float(np.float32(x))


@dataclass
class DepthFrame:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray  # camera -> world, 4x4
    depth: np.ndarray  # (height, width)

    def __post_init__(self):
        # values are kept f32-representable so the binary format round-trips exactly
        self.width, self.height = int(self.width), int(self.height)
        self.fx, self.fy, self.cx, self.cy = (_f32(v) for v in (self.fx, self.fy, self.cx, self.cy))
        self.pose = np.asarray(self.pose, dtype=np.float32).astype(np.float64).reshape(4, 4)
        self.depth = np.asarray(self.depth, dtype=np.float32).reshape(self.height, self.width)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth must be finite and non-negative")

    @property
    def camera_center(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shape (h, w, 3)."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u, dtype=np.float64)], axis=-1
        )

    def backproject(self) -> np.ndarray:
        """World points for every pixel, shape (h, w, 3); invalid pixels are NaN."""
        cam = self.pixel_rays() * self.depth[..., None].astype(np.float64)
        world = transform_points(self.pose, cam.reshape(-1, 3)).reshape(cam.shape)
        world[self.depth <= 0] = np.nan
        return world

    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


def intrinsics_from_fov(width: int, height: int, fov_deg: float) -> tuple[float, float, float, float]:
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return f, f, (width - 1) / 2.0, (height - 1) / 2.0


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(up, z)) > 0.999:
        up = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x, y, z, eye
    return pose


def _sphere_trace(shapes, origin, dirs, far: float, tol: float, max_iter: int) -> np.ndarray:
    t = np.zeros(len(dirs))
    hit = np.zeros(len(dirs), dtype=bool)
    active = np.arange(len(dirs))
    for _ in range(max_iter):
        if not len(active):
            break
        d = scene_sdf(shapes, origin + t[active, None] * dirs[active])
        close = d < tol
        hit[active[close]] = True
        t[active] += np.where(close, 0.0, d)
        active = active[~close & (t[active] < far)]
    t[~hit] = np.inf
    return t


def render_depth(
    scene,
    width: int,
    height: int,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    pose: np.ndarray,
    far: float = 100.0,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> DepthFrame:
    """Ray-cast a depth frame of a primitive list (sphere tracing) or a mesh."""
    frame = DepthFrame(width, height, fx, fy, cx, cy, pose, np.zeros((height, width)))
    rays = frame.pixel_rays().reshape(-1, 3)
    norms = np.linalg.norm(rays, axis=1)
    dirs = (rays / norms[:, None]) @ frame.pose[:3, :3].T
    origin = frame.pose[:3, 3]
    if isinstance(scene, TriangleMesh):
        t = raycast_mesh(scene, origin[None], dirs) if len(scene) else np.full(len(dirs), np.inf)
    else:
        shapes = list(scene)
        t = _sphere_trace(shapes, origin, dirs, far, tol, max_iter) if shapes else np.full(len(dirs), np.inf)
    z = np.where(np.isfinite(t) & (t < far), t / norms, 0.0)
    frame.depth = z.reshape(height, width).astype(np.float32)
    return frame


def add_depth_noise(frame: DepthFrame, sigma: float, rng: np.random.Generator) -> DepthFrame:
    """Additive Gaussian noise on valid depth values."""
    depth = frame.depth.astype(np.float64)
    valid = depth > 0
    depth[valid] += rng.normal(0.0, sigma, valid.sum())
    depth[depth <= 0] = 0.0
    return DepthFrame(frame.width, frame.height, frame.fx, frame.fy, frame.cx, frame.cy, frame.pose, depth)


def orbit_cameras(n_views: int, distance: float, target=(0.0, 0.0, 0.0), elevation_deg: float = 30.0):
    """Poses on a ring around ``target``; alternate views dip below the equator."""
    poses = []
    for i in range(n_views):
        az = 2 * np.pi * i / n_views
        el = np.radians(elevation_deg if i % 2 == 0 else -elevation_deg)
        eye = np.asarray(target) + distance * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        poses.append(look_at(eye, target))
    return poses
