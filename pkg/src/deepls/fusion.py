"""Dense TSDF fusion baseline (weighted running average of projective distances)."""

from __future__ import annotations

import numpy as np

from .camera import DepthFrame
from .sampling import weight_for_depth
from .shapes import inverse_pose, transform_points


class TsdfVolume:
    """Voxel ``(i, j, k)`` is sampled at ``origin + (i, j, k) * voxel_size``.

    ``tsdf`` is stored in units of ``truncation`` and starts at 1 with zero
    weight.
    """

    def __init__(self, origin, voxel_size: float, dims, truncation: float | None = None, max_weight=None):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        self.truncation = 3.0 * self.voxel_size if truncation is None else float(truncation)
        self.max_weight = max_weight
        self.tsdf = np.ones(self.dims, dtype=np.float64)
        self.weight = np.zeros(self.dims, dtype=np.float64)

    @classmethod
    def covering(cls, lo, hi, voxel_size: float, **kw) -> "TsdfVolume":
        lo = np.asarray(lo, dtype=np.float64)
        dims = np.ceil((np.asarray(hi) - lo) / voxel_size).astype(int) + 1
        return cls(lo, voxel_size, dims, **kw)

    def voxel_positions(self) -> np.ndarray:
        axes = [self.origin[i] + self.voxel_size * np.arange(self.dims[i]) for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def integrate(self, frame: DepthFrame, z_ref: float | None = None) -> "TsdfVolume":
        """Fuse one depth frame in place; returns self."""
        pts = self.voxel_positions()
        cam = transform_points(inverse_pose(frame.pose), pts)
        z = cam[:, 2]
        valid = z > 1e-9
        u = np.full(len(z), -1, dtype=np.int64)
        v = np.full(len(z), -1, dtype=np.int64)
        u[valid] = np.rint(frame.fx * cam[valid, 0] / z[valid] + frame.cx).astype(np.int64)
        v[valid] = np.rint(frame.fy * cam[valid, 1] / z[valid] + frame.cy).astype(np.int64)
        valid &= (u >= 0) & (u < frame.width) & (v >= 0) & (v < frame.height)
        depth = np.zeros(len(z))
        depth[valid] = frame.depth[v[valid], u[valid]]
        valid &= depth > 0
        d = depth - z
        valid &= d >= -self.truncation
        if not valid.any():
            return self
        if z_ref is None:
            z_ref = float(frame.depth[frame.depth > 0].min())
        w_new = weight_for_depth(depth[valid], z_ref)
        obs = np.minimum(d[valid], self.truncation) / self.truncation
        flat_t = self.tsdf.reshape(-1)
        flat_w = self.weight.reshape(-1)
        idx = np.nonzero(valid)[0]
        w_old = flat_w[idx]
        flat_t[idx] = (w_old * flat_t[idx] + w_new * obs) / (w_old + w_new)
        w_sum = w_old + w_new
        if self.max_weight is not None:
            w_sum = np.minimum(w_sum, self.max_weight)
        flat_w[idx] = w_sum
        return self

    def query(self, positions, min_weight: float = 0.0) -> np.ndarray:
        """Trilinear SDF (scene units); NaN outside or where a corner has weight <= min_weight."""
        pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        g = (pts - self.origin) / self.voxel_size
        i0 = np.floor(g).astype(np.int64)
        f = g - i0
        dims = np.array(self.dims)
        # a point on the far face uses the last cell
        at_end = (i0 == dims - 1) & (f == 0)
        i0 = np.where(at_end, i0 - 1, i0)
        f = np.where(at_end, 1.0, f)
        inside = np.all((i0 >= 0) & (i0 < dims - 1), axis=1)
        out = np.full(len(pts), np.nan)
        if not inside.any():
            return out
        i0, f = i0[inside], f[inside]
        acc = np.zeros(len(i0))
        ok = np.ones(len(i0), dtype=bool)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ii = (i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz)
                    wgt = (f[:, 0] if dx else 1 - f[:, 0]) * (f[:, 1] if dy else 1 - f[:, 1]) * (
                        f[:, 2] if dz else 1 - f[:, 2]
                    )
                    acc += wgt * self.tsdf[ii]
                    ok &= self.weight[ii] > min_weight
        out[np.nonzero(inside)[0][ok]] = acc[ok] * self.truncation
        return out

    def bounds(self):
        return self.origin, self.origin + self.voxel_size * (np.array(self.dims) - 1)


def integrate(volume: TsdfVolume, frame: DepthFrame, z_ref: float | None = None) -> TsdfVolume:
    return volume.integrate(frame, z_ref)


def tsdf_query(volume: TsdfVolume, world_pos):
    val = volume.query(np.asarray(world_pos, dtype=np.float64)[None])[0]
    return None if np.isnan(val) else float(val)


def fuse_frames(frames, lo, hi, voxel_size: float, truncation: float | None = None, z_ref=None) -> TsdfVolume:
    vol = TsdfVolume.covering(lo, hi, voxel_size, truncation=truncation)
    if z_ref is None:
        depths = [f.depth[f.depth > 0] for f in frames]
        depths = [d for d in depths if d.size]
        z_ref = float(min(d.min() for d in depths)) if depths else 1.0
    for frame in frames:
        vol.integrate(frame, z_ref)
    return vol
