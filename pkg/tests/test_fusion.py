import numpy as np
import pytest

from deepls.camera import DepthFrame, intrinsics_from_fov
from deepls.fusion import TsdfVolume, fuse_frames, integrate, tsdf_query


def plane_frame(z=2.0, size=41):
    fx, fy, cx, cy = intrinsics_from_fov(size, size, 60.0)
    return DepthFrame(size, size, fx, fy, cx, cy, np.eye(4), np.full((size, size), z))


def plane_volume(voxel=0.05):
    return TsdfVolume.covering((-0.3, -0.3, 1.5), (0.3, 0.3, 2.5), voxel)


def test_plane_zero_crossing():
    vol = integrate(plane_volume(), plane_frame())
    i, j = vol.dims[0] // 2, vol.dims[1] // 2
    column = vol.tsdf[i, j]
    z = vol.origin[2] + vol.voxel_size * np.arange(vol.dims[2])
    k = np.nonzero((column[:-1] > 0) & (column[1:] <= 0))[0]
    assert len(k) == 1
    k = k[0]
    crossing = z[k] + vol.voxel_size * column[k] / (column[k] - column[k + 1])
    assert abs(crossing - 2.0) < vol.voxel_size


def test_double_integration_fixed_point():
    a = integrate(plane_volume(), plane_frame())
    b = integrate(integrate(plane_volume(), plane_frame(), z_ref=2.0), plane_frame(), z_ref=2.0)
    a2 = integrate(plane_volume(), plane_frame(), z_ref=2.0)
    np.testing.assert_array_equal(b.tsdf, a2.tsdf)
    np.testing.assert_array_equal(b.weight, 2 * a2.weight)
    assert np.array_equal(a.tsdf, a2.tsdf)


def test_far_behind_surface_untouched():
    vol = integrate(plane_volume(), plane_frame())
    z = vol.origin[2] + vol.voxel_size * np.arange(vol.dims[2])
    behind = z > 2.0 + vol.truncation + 1e-9
    assert behind.any()
    assert np.all(vol.weight[:, :, behind] == 0)
    assert np.all(vol.tsdf[:, :, behind] == 1.0)


def test_query_at_voxel_and_midpoint(rng):
    vol = TsdfVolume((0.0, 0.0, 0.0), 0.1, (4, 4, 4))
    vol.tsdf = rng.uniform(-1, 1, vol.dims)
    vol.weight[:] = 1.0
    assert tsdf_query(vol, np.array([0.1, 0.2, 0.1])) == pytest.approx(vol.tsdf[1, 2, 1] * vol.truncation, abs=1e-15)
    mid = tsdf_query(vol, np.array([0.15, 0.2, 0.1]))
    assert mid == pytest.approx((vol.tsdf[1, 2, 1] + vol.tsdf[2, 2, 1]) / 2 * vol.truncation, rel=1e-12)
    assert tsdf_query(vol, np.array([5.0, 0, 0])) is None


def trilinear_reference(vol, p):
    g = (p - vol.origin) / vol.voxel_size
    i = np.minimum(np.floor(g).astype(int), np.array(vol.dims) - 2)
    f = g - i
    acc = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1]) * (f[2] if dz else 1 - f[2])
                acc += w * vol.tsdf[i[0] + dx, i[1] + dy, i[2] + dz]
    return acc * vol.truncation


def test_trilinear_matches_reference(rng):
    vol = TsdfVolume((-0.5, 0.2, 1.0), 0.07, (6, 5, 7))
    vol.tsdf = rng.uniform(-1, 1, vol.dims)
    vol.weight[:] = 1.0
    lo, hi = vol.bounds()
    probes = rng.uniform(lo, hi, (500, 3))
    got = vol.query(probes)
    ref = np.array([trilinear_reference(vol, p) for p in probes])
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-15)


def test_min_weight_masks_unobserved():
    vol = integrate(plane_volume(), plane_frame())
    lo, hi = vol.bounds()
    q = vol.query(np.array([[0.0, 0.0, 2.4]]), min_weight=0.0)
    assert np.isnan(q[0])


def test_fuse_frames_matches_manual_integration():
    frames = [plane_frame(2.0), plane_frame(2.02)]
    a = fuse_frames(frames, (-0.3, -0.3, 1.5), (0.3, 0.3, 2.5), 0.05)
    b = plane_volume()
    for f in frames:
        b.integrate(f, 2.0)
    np.testing.assert_array_equal(a.tsdf, b.tsdf)


def test_invalid_voxel_size():
    with pytest.raises(ValueError):
        TsdfVolume((0, 0, 0), 0.0, (2, 2, 2))
