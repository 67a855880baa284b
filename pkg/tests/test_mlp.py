import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepls.mlp import (
    AdamState, ConfigError, ContractError, LayerParams, MlpSpec, adam_step, backward, flatten_params, forward,
    mlp_init,
)


def spec64(input_dim=4, hidden=16, layers=4):
    return MlpSpec(input_dim, hidden, layers, 1, dtype=np.float64)


def reference_forward(params, x, slope):
    """Straight-line re-implementation used as an oracle."""
    h = list(x)
    for li, layer in enumerate(params):
        out = []
        for r in range(layer.weights.shape[0]):
            acc = layer.biases[r]
            for c in range(layer.weights.shape[1]):
                acc += layer.weights[r, c] * h[c]
            if li < len(params) - 1 and acc <= 0:
                acc *= slope
            out.append(acc)
        h = out
    return np.array(h)


def test_init_shapes():
    params = mlp_init(MlpSpec(4, 128, 4, 1), seed=7)
    assert [p.weights.shape for p in params] == [(128, 4), (128, 128), (128, 128), (1, 128)]
    assert [p.biases.shape for p in params] == [(128,), (128,), (128,), (1,)]


def test_init_deterministic_and_seed_sensitive():
    spec = MlpSpec(4, 128, 4, 1)
    a, b, c = mlp_init(spec, 7), mlp_init(spec, 7), mlp_init(spec, 8)
    for la, lb in zip(a, b):
        assert np.array_equal(la.weights, lb.weights) and np.array_equal(la.biases, lb.biases)
    assert any(not np.array_equal(la.weights, lc.weights) for la, lc in zip(a, c))


@pytest.mark.parametrize("bad", [dict(hidden_dim=0), dict(num_layers=0), dict(leaky_slope=0.0)])
def test_invalid_spec_rejected(bad):
    with pytest.raises(ConfigError):
        mlp_init(MlpSpec(4, **bad), 0)


def test_zero_network_outputs_zero(rng):
    spec = spec64()
    params = [LayerParams(np.zeros_like(p.weights), np.zeros_like(p.biases)) for p in mlp_init(spec, 0)]
    out, _ = forward(params, spec, rng.standard_normal((5, 4)))
    assert np.all(out == 0)


def test_single_linear_layer_identity():
    spec = MlpSpec(1, 1, 1, 1, dtype=np.float64)
    out, _ = forward([LayerParams(np.array([[1.0]]), np.array([0.0]))], spec, np.array([2.0]))
    assert out[0] == 2.0


@given(st.integers(0, 2**31 - 1))
def test_forward_matches_reference(seed):
    spec = spec64(5, 7, 3)
    rng = np.random.default_rng(seed)
    params = mlp_init(spec, seed)
    for p in params:
        p.biases[:] = rng.standard_normal(p.biases.shape)
    x = rng.standard_normal(5)
    out, _ = forward(params, spec, x)
    ref = reference_forward(params, x, spec.leaky_slope)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)


def test_forward_rejects_bad_input():
    spec = spec64()
    with pytest.raises(ContractError):
        forward(mlp_init(spec, 0), spec, np.zeros(3))


def test_backward_zero_upstream(rng):
    spec = spec64()
    _, tape = forward(mlp_init(spec, 0), spec, rng.standard_normal((3, 4)))
    grads, gx = backward(tape, np.zeros((3, 1)))
    assert all(np.all(g.weights == 0) and np.all(g.biases == 0) for g in grads)
    assert np.all(gx == 0)


def test_backward_linear_outer_product(rng):
    spec = MlpSpec(3, 1, 1, 2, dtype=np.float64)
    params = [LayerParams(rng.standard_normal((2, 3)), np.zeros(2))]
    x = rng.standard_normal(3)
    up = rng.standard_normal(2)
    _, tape = forward(params, spec, x)
    grads, gx = backward(tape, up)
    np.testing.assert_allclose(grads[0].weights, np.outer(up, x), rtol=1e-14)
    np.testing.assert_allclose(gx, params[0].weights.T @ up, rtol=1e-14)


def test_tape_single_use(rng):
    spec = spec64()
    _, tape = forward(mlp_init(spec, 0), spec, rng.standard_normal(4))
    backward(tape, np.ones(1))
    with pytest.raises(ContractError):
        backward(tape, np.ones(1))


def test_backward_finite_differences():
    spec = spec64(4, 12, 4)
    rng = np.random.default_rng(3)
    params = mlp_init(spec, 3)
    for p in params:
        p.biases[:] = 0.1 * rng.standard_normal(p.biases.shape)
    x = rng.standard_normal((6, 4))
    up = rng.standard_normal((6, 1))

    def objective():
        out, _ = forward(params, spec, x)
        return float(np.sum(out * up))

    _, tape = forward(params, spec, x)
    grads, _ = backward(tape, up)
    h = 1e-5
    checked = 0
    for layer, glayer in zip(params, grads):
        for arr, garr in ((layer.weights, glayer.weights), (layer.biases, glayer.biases)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = objective()
                arr[idx] = old - h
                fm = objective()
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                scale = max(abs(fd), abs(garr[idx]), 1e-6)
                assert abs(fd - garr[idx]) / scale < 1e-4, (idx, fd, garr[idx])
                checked += 1
    assert checked == sum(p.weights.size + p.biases.size for p in params)


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    new, _ = adam_step(AdamState.zeros_like(p), p, [np.zeros(2)])
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_first_step():
    p = [np.array([1.0])]
    new, state = adam_step(AdamState.zeros_like(p, lr=0.01), p, [np.array([1.0])])
    assert abs(new[0][0] - 0.99) < 1e-6
    assert state.step_count == 1


def test_adam_constant_gradient_stabilizes():
    p = [np.array([1.0])]
    state = AdamState.zeros_like(p)
    p1, state = adam_step(state, p, [np.array([0.3])])
    p2, state = adam_step(state, p1, [np.array([0.3])])
    assert abs(p2[0][0] - p1[0][0]) <= abs(p1[0][0] - p[0][0]) * 1.01


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ContractError):
        adam_step(AdamState.zeros_like(p), p, [np.zeros(3)])


def test_flatten_roundtrip():
    params = mlp_init(spec64(), 0)
    flat = flatten_params(params)
    assert len(flat) == 8 and flat[0] is params[0].weights
