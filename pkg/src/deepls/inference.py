"""Encoding scenes into latent grids with a frozen decoder, and SDF queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .decoder import DecoderParams, decode_tanh
from .grid import LatentGrid, _pack
from .mlp import ContractError, adam_update
from .sampling import SdfSamples
from .training import REG_WEIGHT, NumericalError, PatchSet, dataset_losses, voxel_objective

log = logging.getLogger(__name__)

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass
class EncodeConfig:
    iterations: int = 300
    lr: float = 0.01
    reg_weight: float = REG_WEIGHT
    convergence_tol: float = 1e-4
    convergence_window: int = 50
    early_exit: bool = True
    samples_per_voxel: int | None = 64
    seed: int = 0
    chunk_voxels: int = 512

    def __post_init__(self):
        if self.iterations < 0:
            raise ContractError("iterations must be non-negative")
        if self.convergence_tol < 0:
            raise ContractError("convergence_tol must be non-negative")


@dataclass
class EncodeResult:
    grid: LatentGrid
    losses: np.ndarray  # full-data per-voxel loss after encoding
    empty: np.ndarray  # voxels without samples (codes left at initialization)
    iterations: np.ndarray  # optimizer steps taken per voxel


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
        return x ^ (x >> np.uint64(31))


def _voxel_draws(keys: np.ndarray, seed: int, iteration: int, k: int, counts: np.ndarray) -> np.ndarray:
    """Counter-based sample picks: a pure function of (seed, voxel, iteration, slot)."""
    with np.errstate(over="ignore"):
        base = _splitmix(keys.astype(np.uint64) ^ _splitmix(np.uint64(seed) * np.uint64(1000003) + np.uint64(iteration)))
        slots = base[:, None] + np.arange(k, dtype=np.uint64)[None, :] * np.uint64(0x9E3779B97F4A7C15)
        h = _splitmix(slots)
    return (h % counts[:, None].astype(np.uint64)).astype(np.int64)


def decoder_for_grid(decoder: DecoderParams, grid: LatentGrid) -> DecoderParams:
    """Decoder view at the grid's voxel size (truncation scaled alongside)."""
    if grid.code_dim != decoder.code_dim:
        raise ContractError(f"grid code_dim {grid.code_dim} != decoder code_dim {decoder.code_dim}")
    ratio = decoder.truncation / decoder.voxel_size
    return DecoderParams(
        decoder.mlp, decoder.spec, decoder.code_dim, ratio * grid.voxel_size, grid.voxel_size,
        decoder.tanh_clamp, decoder.pos_dim,
    )


def encode_patches(
    decoder: DecoderParams, codes: np.ndarray, patches: PatchSet, keys: np.ndarray, config: EncodeConfig
):
    """Optimise each voxel's code independently over its own samples.

    Voxels are processed in chunks; within a chunk they share one batched
    forward pass, but every voxel has its own Adam state, sample stream and
    early-exit decision, so results do not depend on chunking or order.
    """
    codes = codes.astype(decoder.dtype, copy=True)
    counts = patches.counts
    steps = np.zeros(len(codes), dtype=np.int64)
    todo = np.nonzero(counts > 0)[0]
    k = config.samples_per_voxel
    w = config.convergence_window
    for c0 in range(0, len(todo), config.chunk_voxels):
        chunk = todo[c0 : c0 + config.chunk_voxels]
        m = np.zeros_like(codes[chunk])
        v = np.zeros_like(m)
        z = codes[chunk].copy()
        history = np.zeros((len(chunk), config.iterations))
        active = np.ones(len(chunk), dtype=bool)
        for it in range(config.iterations):
            act = np.nonzero(active)[0]
            if not len(act):
                break
            vox = chunk[act]
            if k is None:
                seg = np.repeat(np.arange(len(act)), counts[vox])
                rows = np.concatenate([np.arange(patches.offsets[x], patches.offsets[x + 1]) for x in vox])
            else:
                pick = _voxel_draws(keys[vox], config.seed, it, k, counts[vox])
                rows = (patches.offsets[vox][:, None] + pick).ravel()
                seg = np.repeat(np.arange(len(act)), k)
            losses, _, grads = voxel_objective(
                decoder, z[act], patches.local[rows], patches.sdf[rows], patches.weights[rows], seg,
                config.reg_weight, need_param_grads=False,
            )
            if not np.all(np.isfinite(losses)):
                raise NumericalError(f"non-finite encoding loss at iteration {it}")
            history[act, it] = losses
            z[act], m[act], v[act] = adam_update(z[act], grads, m[act], v[act], it + 1, config.lr)
            steps[vox] += 1
            if config.early_exit and (it + 1) % w == 0 and it + 1 >= 2 * w:
                prev = history[act, it + 1 - 2 * w : it + 1 - w].mean(axis=1)
                last = history[act, it + 1 - w : it + 1].mean(axis=1)
                active[act[prev - last < config.convergence_tol]] = False
        codes[chunk] = z
    return codes, steps


def voxel_keys(grid: LatentGrid) -> np.ndarray:
    return _pack(grid.indices)


def encode_scene(
    decoder: DecoderParams, grid: LatentGrid, samples: SdfSamples, config: EncodeConfig | None = None
) -> EncodeResult:
    """MAP codes for every allocated voxel of ``grid`` (decoder weights fixed)."""
    config = config or EncodeConfig()
    dec = decoder_for_grid(decoder, grid)
    patches = PatchSet.from_grid(grid, samples, pos_dim=dec.pos_dim)
    out = grid.copy()
    codes, steps = encode_patches(dec, grid.codes, patches, voxel_keys(grid), config)
    out.codes = codes
    losses = dataset_losses(dec, codes, patches, config.reg_weight)
    empty = patches.counts == 0
    if empty.any():
        log.info("%d voxels without samples kept their initial codes", int(empty.sum()))
    return EncodeResult(out, losses, empty, steps)


def query_sdf_batch(decoder: DecoderParams, grid: LatentGrid, positions, chunk: int = 65536) -> np.ndarray:
    """Scene-unit SDF at each position using the containing voxel's code; NaN if unallocated."""
    dec = decoder_for_grid(decoder, grid)
    pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    out = np.full(len(pts), np.nan)
    rows = grid.query_rows(pts)
    hit = np.nonzero(rows >= 0)[0]
    for s in range(0, len(hit), chunk):
        h = hit[s : s + chunk]
        local = (pts[h] - grid.center(grid.indices[rows[h]]))[:, : dec.pos_dim]
        out[h] = dec.output_scale * decode_tanh(dec, local, grid.codes[rows[h]]).astype(np.float64)
    return out


def query_sdf(decoder: DecoderParams, grid: LatentGrid, world_pos):
    """SDF at one position, or None outside allocated voxels."""
    val = query_sdf_batch(decoder, grid, np.asarray(world_pos, dtype=np.float64)[None])[0]
    return None if np.isnan(val) else float(val)


def decode_in_voxel(decoder: DecoderParams, grid: LatentGrid, idx, positions) -> np.ndarray:
    """Decode positions with a specific voxel's code (no containment check)."""
    dec = decoder_for_grid(decoder, grid)
    row = grid.rows_for_indices(np.asarray(idx)[None])[0]
    if row < 0:
        raise ContractError(f"voxel {tuple(idx)} is not allocated")
    local = grid.to_local(idx, positions)[:, : dec.pos_dim]
    return dec.output_scale * decode_tanh(dec, local, grid.codes[row]).astype(np.float64)
