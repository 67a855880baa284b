"""Local SDF autodecoder: (voxel-local position, latent code) -> truncated SDF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import ContractError, LayerParams, MlpSpec, backward, forward, mlp_init

CODE_DIM = 125
TANH_CLAMP = 0.9
# targets reach TANH_CLAMP at this many voxel side lengths from the surface
CLAMP_BLOCKS = 2.0


@dataclass
class DecoderParams:
    mlp: list[LayerParams]
    spec: MlpSpec
    code_dim: int = CODE_DIM
    truncation: float = 2.0
    voxel_size: float = 1.0
    tanh_clamp: float = TANH_CLAMP
    pos_dim: int = 3

    def __post_init__(self):
        if self.spec.input_dim != self.code_dim + self.pos_dim:
            raise ContractError(
                f"input_dim {self.spec.input_dim} != code_dim {self.code_dim} + {self.pos_dim}"
            )
        if self.truncation <= 0 or self.voxel_size <= 0:
            raise ContractError("truncation and voxel_size must be positive")

    @property
    def target_scale(self) -> float:
        """Scale ``s`` with ``tanh(s * CLAMP_BLOCKS * voxel / truncation) = tanh_clamp``."""
        return float(np.arctanh(self.tanh_clamp) * self.truncation / (CLAMP_BLOCKS * self.voxel_size))

    @property
    def output_scale(self) -> float:
        """Scene-unit factor applied to the tanh output (unit slope at the surface)."""
        return self.truncation / self.target_scale

    @property
    def dtype(self):
        return self.spec.dtype

    def with_mlp(self, mlp: list[LayerParams]) -> "DecoderParams":
        return DecoderParams(
            mlp, self.spec, self.code_dim, self.truncation, self.voxel_size, self.tanh_clamp, self.pos_dim
        )


def make_decoder(
    code_dim: int = CODE_DIM,
    voxel_size: float = 1.0,
    truncation: float | None = None,
    seed: int = 0,
    hidden_dim: int = 128,
    num_layers: int = 4,
    pos_dim: int = 3,
    dtype=np.float32,
) -> DecoderParams:
    if truncation is None:
        truncation = CLAMP_BLOCKS * voxel_size
    spec = MlpSpec(code_dim + pos_dim, hidden_dim, num_layers, 1, dtype=dtype)
    return DecoderParams(mlp_init(spec, seed), spec, code_dim, truncation, voxel_size, pos_dim=pos_dim)


def encode_target(raw_sdf, params: DecoderParams):
    """Map scene-unit SDF values into the network's tanh space."""
    return np.tanh(np.asarray(raw_sdf, dtype=np.float64) * (params.target_scale / params.truncation))


def network_input(params: DecoderParams, local_pos: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Concatenate ``[code, local_pos / voxel_size]`` row-wise."""
    local_pos = np.atleast_2d(np.asarray(local_pos, dtype=params.dtype))
    codes = np.atleast_2d(np.asarray(codes, dtype=params.dtype))
    if codes.shape[1] != params.code_dim:
        raise ContractError(f"code dimension {codes.shape[1]} != {params.code_dim}")
    if local_pos.shape[1] != params.pos_dim:
        raise ContractError(f"position dimension {local_pos.shape[1]} != {params.pos_dim}")
    if codes.shape[0] == 1 and local_pos.shape[0] > 1:
        codes = np.broadcast_to(codes, (local_pos.shape[0], params.code_dim))
    scale = params.dtype(1.0 / params.voxel_size)
    return np.concatenate([codes, local_pos * scale], axis=1)


def decode_tanh(params: DecoderParams, local_pos, codes, with_tape: bool = False):
    """Network output after tanh, in (-1, 1). Optionally returns the tape."""
    pre, tape = forward(params.mlp, params.spec, network_input(params, local_pos, codes))
    y = np.tanh(pre[:, 0])
    return (y, tape) if with_tape else y


def decode(params: DecoderParams, local_pos, code) -> np.ndarray | float:
    """Scene-unit SDF for one position or a batch of positions.

    ``code`` is either one code shared by all positions or one code per row.
    """
    single = np.ndim(local_pos) == 1
    y = decode_tanh(params, local_pos, code)
    sdf = params.output_scale * y.astype(np.float64)
    return float(sdf[0]) if single else sdf


def tanh_backward(params: DecoderParams, tape, y: np.ndarray, grad_y: np.ndarray, need_param_grads: bool = True):
    """Backpropagate ``dL/dy`` through tanh and the MLP.

    Returns ``(param_grads, code_grads)``; code gradients are per row.
    """
    upstream = (grad_y * (1.0 - y * y))[:, None]
    pgrads, xgrad = backward(tape, upstream, need_param_grads)
    return pgrads, xgrad[:, : params.code_dim]
