"""Small dense network with exact reverse-mode gradients and Adam.

Layers are stored as ``LayerParams`` with ``weights`` of shape (out, in), so a
layer computes ``x @ W.T + b`` on row-batched inputs. All hidden layers are
followed by a leaky ReLU; the last layer is linear (the decoder applies tanh).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.01


class ContractError(ValueError):
    """Raised when an operation is called with inconsistent arguments."""


class ConfigError(ValueError):
    """Raised for invalid network or optimizer configuration."""


@dataclass
class MlpSpec:
    input_dim: int
    hidden_dim: int = 128
    num_layers: int = 4
    output_dim: int = 1
    leaky_slope: float = LEAKY_SLOPE
    dtype: type = np.float32

    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(self.num_layers)]

    def validate(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.output_dim, self.num_layers) <= 0:
            raise ConfigError(f"network dimensions must be positive: {self}")
        if not 0.0 < self.leaky_slope <= 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1], got {self.leaky_slope}")


@dataclass
class LayerParams:
    weights: np.ndarray
    biases: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.biases.copy())


@dataclass
class Tape:
    """Activations of one forward call; consumed by exactly one backward."""

    params: list[LayerParams]
    spec: MlpSpec
    inputs: np.ndarray
    preacts: list[np.ndarray]
    squeeze: bool
    consumed: bool = False


def mlp_init(spec: MlpSpec, seed: int) -> list[LayerParams]:
    """Fan-in scaled uniform weights (He bound for leaky ReLU), zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + spec.leaky_slope**2))
    params = []
    for out_dim, in_dim in spec.layer_sizes():
        bound = gain * np.sqrt(3.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(spec.dtype)
        params.append(LayerParams(w, np.zeros(out_dim, dtype=spec.dtype)))
    return params


def _check_params(params: list[LayerParams], spec: MlpSpec) -> None:
    sizes = spec.layer_sizes()
    if len(params) != len(sizes):
        raise ContractError(f"expected {len(sizes)} layers, got {len(params)}")
    for layer, (out_dim, in_dim) in zip(params, sizes):
        if layer.weights.shape != (out_dim, in_dim) or layer.biases.shape != (out_dim,):
            raise ContractError(
                f"layer shape {layer.weights.shape}/{layer.biases.shape} "
                f"does not match ({out_dim}, {in_dim})"
            )


def forward(params: list[LayerParams], spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on one input vector or a row batch ``(n, input_dim)``."""
    x = np.asarray(x, dtype=spec.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"input shape {x.shape} incompatible with input_dim={spec.input_dim}")
    _check_params(params, spec)

    slope = spec.dtype(spec.leaky_slope)
    preacts = []
    h = x
    last = len(params) - 1
    for i, layer in enumerate(params):
        z = h @ layer.weights.T + layer.biases
        preacts.append(z)
        h = np.where(z > 0, z, slope * z) if i < last else z
    out = h[0] if squeeze else h
    return out, Tape(params, spec, x, preacts, squeeze)


def backward(
    tape: Tape, upstream: np.ndarray, need_param_grads: bool = True
) -> tuple[list[LayerParams] | None, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and inputs.

    Parameter gradients are summed over the batch. With ``need_param_grads``
    false only the input gradient is formed (code-only optimization).
    """
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward call")
    spec = tape.spec
    g = np.asarray(upstream, dtype=spec.dtype)
    if tape.squeeze:
        g = g[None, :]
    n = tape.inputs.shape[0]
    if g.shape != (n, spec.output_dim):
        raise ContractError(f"upstream shape {g.shape} does not match output ({n}, {spec.output_dim})")
    tape.consumed = True

    slope = spec.dtype(spec.leaky_slope)
    grads: list[LayerParams | None] = [None] * len(tape.params)
    for i in range(len(tape.params) - 1, -1, -1):
        layer = tape.params[i]
        if i < len(tape.params) - 1:
            g = np.where(tape.preacts[i] > 0, g, slope * g)
        if need_param_grads:
            if i == 0:
                h_in = tape.inputs
            else:
                z = tape.preacts[i - 1]
                h_in = np.where(z > 0, z, slope * z)
            grads[i] = LayerParams(g.T @ h_in, g.sum(axis=0))
        g = g @ layer.weights
    input_grad = g[0] if tape.squeeze else g
    return (grads if need_param_grads else None), input_grad


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: list[np.ndarray], lr: float = 0.01, **kw) -> "AdamState":
        return cls(
            [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr=lr, **kw
        )


def adam_update(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on arrays; ``t`` is the new step count.

    ``t`` may be an array broadcastable against ``p`` (per-row step counts).
    Returns new ``(p, m, v)``; inputs are not modified.
    """
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p.astype(m.dtype, copy=False), m, v


def flatten_params(params: list[LayerParams]) -> list[np.ndarray]:
    out = []
    for layer in params:
        out.extend((layer.weights, layer.biases))
    return out


def unflatten_params(arrays: list[np.ndarray]) -> list[LayerParams]:
    return [LayerParams(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
) -> tuple[list[np.ndarray], AdamState]:
    """Adam step over a list of arrays. Returns new arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ContractError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    t = state.step_count + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        p2, m2, v2 = adam_update(p, g, m, v, t, state.lr, state.beta1, state.beta2, state.eps)
        new_p.append(p2)
        new_m.append(m2)
        new_v.append(v2)
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_p, new_state
