"""Analytic primitives with rigid poses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

KINDS = ("sphere", "box", "ellipsoid", "cylinder")


def make_pose(rotation=None, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    pose = np.eye(4)
    if rotation is not None:
        pose[:3, :3] = rotation
    pose[:3, 3] = translation
    return pose


def transform_points(pose: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return np.asarray(pts, dtype=np.float64) @ pose[:3, :3].T + pose[:3, 3]


def inverse_pose(pose: np.ndarray) -> np.ndarray:
    inv = np.eye(4)
    inv[:3, :3] = pose[:3, :3].T
    inv[:3, 3] = -pose[:3, :3].T @ pose[:3, 3]
    return inv


@dataclass
class PrimitiveShape:
    """A primitive in its local frame, placed in the world by ``pose``.

    ``size``: sphere (r,), box half-extents (a, b, c), ellipsoid radii (a, b, c),
    cylinder (radius, half_height) with the axis along local z.
    """

    kind: str
    size: tuple
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.size = tuple(float(s) for s in np.atleast_1d(self.size))
        expected = {"sphere": 1, "box": 3, "ellipsoid": 3, "cylinder": 2}[self.kind]
        if len(self.size) != expected or min(self.size) <= 0:
            raise ValueError(f"{self.kind} needs {expected} positive size values, got {self.size}")
        self.pose = np.asarray(self.pose, dtype=np.float64)

    def to_local(self, world_pos) -> np.ndarray:
        return transform_points(inverse_pose(self.pose), np.atleast_2d(world_pos))

    def bounding_radius(self) -> float:
        if self.kind == "cylinder":
            return float(np.hypot(*self.size))
        if self.kind == "box":
            return float(np.linalg.norm(self.size))
        return max(self.size)


def _sdf_local(kind: str, size: tuple, p: np.ndarray) -> np.ndarray:
    if kind == "sphere":
        return np.linalg.norm(p, axis=1) - size[0]
    if kind == "box":
        q = np.abs(p) - np.asarray(size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)
    if kind == "ellipsoid":
        r = np.asarray(size)
        k0 = np.linalg.norm(p / r, axis=1)
        k1 = np.linalg.norm(p / (r * r), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = k0 * (k0 - 1.0) / k1
        return np.where(k1 > 0, d, -min(size))
    # capped cylinder along z
    radius, half_h = size
    d = np.stack([np.linalg.norm(p[:, :2], axis=1) - radius, np.abs(p[:, 2]) - half_h], axis=1)
    return np.minimum(d.max(axis=1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=1)


def primitive_sdf(shape: PrimitiveShape, world_pos) -> np.ndarray | float:
    """Signed distance (negative inside). Exact for sphere, box and cylinder;
    the ellipsoid uses a first-order bound that is tight near the surface."""
    single = np.ndim(world_pos) == 1
    d = _sdf_local(shape.kind, shape.size, shape.to_local(world_pos))
    return float(d[0]) if single else d


def scene_sdf(shapes, world_pos) -> np.ndarray:
    """Union of primitives (pointwise minimum)."""
    pts = np.atleast_2d(np.asarray(world_pos, dtype=np.float64))
    out = np.full(len(pts), np.inf)
    for s in shapes:
        out = np.minimum(out, primitive_sdf(s, pts))
    return out


def sample_surface(shape: PrimitiveShape, n: int, rng: np.random.Generator) -> np.ndarray:
    """Approximately area-uniform world-space points on the primitive surface."""
    if n <= 0:
        return np.zeros((0, 3))
    if shape.kind in ("sphere", "ellipsoid"):
        u = rng.standard_normal((n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = np.asarray(shape.size if shape.kind == "ellipsoid" else shape.size * 3)
        local = u * r
    elif shape.kind == "box":
        a = np.asarray(shape.size)
        areas = np.array([a[1] * a[2], a[0] * a[2], a[0] * a[1]] * 2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        local = rng.uniform(-1.0, 1.0, size=(n, 3)) * a
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        local[np.arange(n), axis] = sign * a[axis]
    else:
        radius, half_h = shape.size
        side = 2 * np.pi * radius * 2 * half_h
        cap = np.pi * radius**2
        part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        theta = rng.uniform(0, 2 * np.pi, n)
        rr = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0, 1, n)))
        z = np.where(part == 0, rng.uniform(-half_h, half_h, n), np.where(part == 1, half_h, -half_h))
        local = np.stack([rr * np.cos(theta), rr * np.sin(theta), z], axis=1)
    return transform_points(shape.pose, local)


def random_primitive(rng: np.random.Generator, size_range=(1.0, 6.0), center_range=0.0) -> PrimitiveShape:
    """A primitive of random kind, extents and 6-DOF pose."""
    kind = KINDS[rng.integers(len(KINDS))]
    lo, hi = size_range
    if kind == "sphere":
        size = (rng.uniform(lo, hi),)
    elif kind == "cylinder":
        size = (rng.uniform(lo, hi), rng.uniform(lo, hi))
    else:
        size = tuple(rng.uniform(lo, hi, 3))
    rot = Rotation.random(random_state=rng).as_matrix()
    t = rng.uniform(-center_range, center_range, 3) if center_range else np.zeros(3)
    return PrimitiveShape(kind, size, make_pose(rot, t))
