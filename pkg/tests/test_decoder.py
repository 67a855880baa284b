import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepls.decoder import decode, encode_target, make_decoder, network_input
from deepls.mlp import ContractError, LayerParams


def zero_decoder(**kw):
    dec = make_decoder(**kw)
    return dec.with_mlp([LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in dec.mlp])


def test_zero_mlp_decodes_zero(rng):
    dec = zero_decoder(code_dim=8)
    assert decode(dec, rng.standard_normal(3), rng.standard_normal(8)) == 0.0


@given(st.integers(0, 10**6), st.floats(0.01, 10.0))
def test_decode_within_truncation(seed, voxel):
    rng = np.random.default_rng(seed)
    dec = make_decoder(code_dim=8, voxel_size=voxel, seed=seed, hidden_dim=16)
    out = decode(dec, rng.standard_normal((20, 3)) * 10 * voxel, rng.standard_normal(8) * 10)
    assert np.all(np.abs(out) < dec.truncation)


def test_encode_target_anchor_points():
    dec = make_decoder(code_dim=4, voxel_size=0.3)
    assert encode_target(0.0, dec) == 0.0
    assert abs(encode_target(2 * 0.3, dec) - 0.9) < 1e-6
    assert abs(encode_target(-2 * 0.3, dec) + 0.9) < 1e-6
    assert 1.0 - encode_target(1e3, dec) < 1e-12


def test_decode_inverts_target_near_surface():
    # output (T/s) * tanh(.) has unit slope at the surface
    dec = make_decoder(code_dim=4, voxel_size=0.5)
    raw = np.array([1e-4, -2e-4])
    recovered = dec.output_scale * encode_target(raw, dec)
    np.testing.assert_allclose(recovered, raw, rtol=1e-6)


def test_network_input_layout():
    dec = make_decoder(code_dim=2, voxel_size=0.5, dtype=np.float64)
    x = network_input(dec, np.array([[0.5, -0.25, 0.0]]), np.array([7.0, 8.0]))
    np.testing.assert_array_equal(x, [[7.0, 8.0, 1.0, -0.5, 0.0]])


def test_code_dim_mismatch():
    dec = make_decoder(code_dim=4)
    with pytest.raises(ContractError):
        decode(dec, np.zeros(3), np.zeros(5))


def test_overfit_plane_patch():
    from deepls.grid import LatentGrid
    from deepls.sampling import SdfSamples
    from deepls.training import PatchSet, TrainConfig, train_prior

    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 0.5, (2000, 3))
    samples = SdfSamples(pts, pts[:, 2], None)  # plane z = 0
    grid = LatentGrid(1.0, 16, origin=(-0.5, -0.5, -0.5), receptive_radius_factor=0.5)
    grid.allocate(np.zeros((1, 3)))
    patches = PatchSet.from_grid(grid, samples)
    res = train_prior(patches, TrainConfig(steps=500, batch_voxels=1, samples_per_voxel_per_step=256, code_dim=16,
                                           hidden_dim=32, seed=0))
    on_plane = np.c_[rng.uniform(-0.4, 0.4, (50, 2)), np.zeros(50)]
    out = decode(res.decoder, on_plane, res.codes[0])
    assert np.max(np.abs(out)) < 0.05 * res.decoder.truncation
