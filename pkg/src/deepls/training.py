"""Joint training of the shared decoder and per-voxel codes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderParams, decode_tanh, encode_target, make_decoder, tanh_backward
from .grid import LatentGrid
from .mlp import AdamState, ContractError, adam_step, adam_update, flatten_params, unflatten_params
from .sampling import SdfSamples, sample_primitive
from .shapes import random_primitive

log = logging.getLogger(__name__)

REG_WEIGHT = 1e-4  # 1 / sigma^2


class NumericalError(RuntimeError):
    """Optimization produced a non-finite loss."""


@dataclass
class PatchSet:
    """Samples grouped per voxel (CSR layout, rows sorted by voxel).

    ``local`` holds positions relative to the owning voxel's center in scene
    units; ``sdf`` holds raw SDF targets.
    """

    local: np.ndarray
    sdf: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    voxel_size: float

    @property
    def n_voxels(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def voxel(self, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, e = self.offsets[v], self.offsets[v + 1]
        return self.local[s:e], self.sdf[s:e], self.weights[s:e]

    @classmethod
    def from_grid(cls, grid: LatentGrid, samples: SdfSamples, pos_dim: int = 3, factor=None) -> "PatchSet":
        sid, rows = grid.assign(samples.positions, factor)
        local = (samples.positions[sid] - grid.center(grid.indices[rows]))[:, :pos_dim]
        counts = np.bincount(rows, minlength=len(grid))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return cls(local, samples.sdf[sid], samples.weights[sid], offsets, grid.voxel_size)

    @classmethod
    def concat(cls, parts) -> "PatchSet":
        parts = list(parts)
        if not parts:
            raise ContractError("no patch sets to concatenate")
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for p in parts:
            offsets.append(p.offsets[1:] + base)
            base += p.offsets[-1]
        return cls(
            np.concatenate([p.local for p in parts]),
            np.concatenate([p.sdf for p in parts]),
            np.concatenate([p.weights for p in parts]),
            np.concatenate(offsets),
            parts[0].voxel_size,
        )


PatchDataset = PatchSet


@dataclass
class SamplerConfig:
    samples_per_shape: int = 6000
    uniform_per_shape: int = 1000
    size_range: tuple = (1.5, 8.0)
    sigmas: tuple = (0.3, 0.05)
    max_voxels_per_shape: int | None = 24
    allocation_band: float = 0.5


@dataclass
class TrainConfig:
    epochs: int = 100
    steps: int | None = None
    batch_voxels: int = 64
    samples_per_voxel_per_step: int = 64
    lr: float = 0.01
    code_lr: float | None = None
    lr_decay_steps: tuple = (0.5, 0.75)
    lr_decay_factor: float = 0.5
    reg_weight: float = REG_WEIGHT
    seed: int = 0
    hidden_dim: int = 128
    code_dim: int = 125
    pos_dim: int = 3
    log_every: int = 0

    def __post_init__(self):
        if len(self.lr_decay_steps) != 2:
            raise ContractError("exactly two learning-rate decay points are required")
        if self.reg_weight <= 0:
            raise ContractError("reg_weight must be positive")
        if self.steps is not None and self.steps <= 0:
            raise ContractError("steps must be positive")

    @property
    def sigma_reg(self) -> float:
        return 1.0 / math.sqrt(self.reg_weight)


def primitive_scenes(n: int, seed: int, size_range=(1.5, 8.0)):
    rng = np.random.default_rng(seed)
    return [random_primitive(rng, size_range) for _ in range(n)]


def build_patch_dataset(
    scenes, grid_template: LatentGrid, sampler_config: SamplerConfig | None = None, seed: int = 0, pos_dim: int = 3
) -> PatchSet:
    """Allocate a grid per scene and group its samples by extended voxel field.

    ``scenes`` holds primitives (sampled analytically) or ready :class:`SdfSamples`.
    """
    cfg = sampler_config or SamplerConfig()
    rng = np.random.default_rng(seed)
    parts = []
    for scene in scenes:
        if isinstance(scene, SdfSamples):
            samples = scene
        else:
            samples = sample_primitive(scene, cfg.samples_per_shape, rng, cfg.sigmas, cfg.uniform_per_shape)
        if len(samples) == 0:
            raise ContractError("scene produced no samples")
        grid = LatentGrid(
            grid_template.voxel_size, grid_template.code_dim, grid_template.origin,
            grid_template.receptive_radius_factor, grid_template.init_std, grid_template.seed,
        )
        band = cfg.allocation_band * grid.voxel_size
        grid.allocate(samples.near_surface(band))
        if cfg.max_voxels_per_shape is not None and len(grid) > cfg.max_voxels_per_shape:
            keep = np.sort(rng.choice(len(grid), cfg.max_voxels_per_shape, replace=False))
            grid.set_entries(grid.indices[keep], grid.codes[keep])
        patches = PatchSet.from_grid(grid, samples, pos_dim)
        nonempty = np.nonzero(patches.counts > 0)[0]
        if len(nonempty) != patches.n_voxels:
            grid.set_entries(grid.indices[nonempty], grid.codes[nonempty])
            patches = PatchSet.from_grid(grid, samples, pos_dim)
        parts.append(patches)
    return PatchSet.concat(parts)


def voxel_objective(
    decoder: DecoderParams,
    codes: np.ndarray,
    local: np.ndarray,
    sdf: np.ndarray,
    weights: np.ndarray,
    seg: np.ndarray,
    reg_weight: float,
    need_param_grads: bool = True,
):
    """Per-voxel losses and gradients for rows grouped by voxel.

    Row ``r`` belongs to voxel ``seg[r]`` (non-decreasing, every voxel of
    ``codes`` present). Loss of voxel ``v`` is the weighted mean of
    ``|tanh_out - encode_target(sdf)|`` plus ``reg_weight * |z_v|^2``.
    Returns ``(losses, param_grads, code_grads)`` with param grads summed.
    """
    n_vox = len(codes)
    y, tape = decode_tanh(decoder, local, codes[seg], with_tape=True)
    y = y.astype(np.float64)
    resid = y - encode_target(sdf, decoder)
    wsum = np.bincount(seg, weights=weights, minlength=n_vox)
    data = np.bincount(seg, weights=weights * np.abs(resid), minlength=n_vox) / wsum
    losses = data + reg_weight * np.einsum("ij,ij->i", codes, codes, dtype=np.float64)
    grad_y = (weights * np.sign(resid) / wsum[seg]).astype(decoder.dtype)
    pgrads, row_grads = tanh_backward(decoder, tape, y.astype(decoder.dtype), grad_y, need_param_grads)
    starts = np.concatenate([[0], np.nonzero(np.diff(seg))[0] + 1])
    code_grads = np.add.reduceat(row_grads, starts, axis=0) + (2.0 * reg_weight) * codes
    return losses, pgrads, code_grads.astype(codes.dtype)


def loss(decoder: DecoderParams, code, local_samples, reg_weight: float = REG_WEIGHT) -> float:
    """Loss of one voxel: ``(local_positions, sdf, weights)`` against one code."""
    code = np.asarray(code, dtype=decoder.dtype).reshape(1, -1)
    local, sdf, weights = local_samples
    reg = reg_weight * float(np.dot(code[0].astype(np.float64), code[0]))
    if len(sdf) == 0:
        return reg
    weights = np.ones(len(sdf)) if weights is None else np.asarray(weights, dtype=np.float64)
    y = decode_tanh(decoder, local, code).astype(np.float64)
    data = np.sum(weights * np.abs(y - encode_target(sdf, decoder))) / np.sum(weights)
    return float(data + reg)


def _gather_batch(patches: PatchSet, voxels: np.ndarray, k: int, rng: np.random.Generator):
    counts = patches.counts[voxels]
    pick = (rng.random((len(voxels), k)) * counts[:, None]).astype(np.int64)
    rows = (patches.offsets[voxels][:, None] + pick).ravel()
    seg = np.repeat(np.arange(len(voxels)), k)
    return patches.local[rows], patches.sdf[rows], patches.weights[rows], seg


def lr_at(step: int, total: int, config: TrainConfig) -> float:
    lr = config.lr
    for frac in config.lr_decay_steps:
        if step >= int(frac * total):
            lr *= config.lr_decay_factor
    return lr


@dataclass
class TrainResult:
    decoder: DecoderParams
    codes: np.ndarray
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    step_lrs: list = field(default_factory=list)
    optimizer: AdamState | None = None


def train_prior(
    dataset: PatchSet, config: TrainConfig, decoder: DecoderParams | None = None, dtype=np.float32
) -> TrainResult:
    """Jointly optimise decoder weights and all voxel codes with Adam.

    Each step draws ``batch_voxels`` voxels (an epoch is one shuffled pass)
    and ``samples_per_voxel_per_step`` samples per voxel with replacement.
    Code Adam states are per voxel and advance only when the voxel is drawn.
    """
    rng = np.random.default_rng(config.seed)
    valid = np.nonzero(dataset.counts > 0)[0]
    if not len(valid):
        raise ContractError("dataset has no samples")
    if decoder is None:
        decoder = make_decoder(
            config.code_dim, dataset.voxel_size, seed=config.seed, hidden_dim=config.hidden_dim,
            pos_dim=config.pos_dim, dtype=dtype,
        )
    codes = (rng.standard_normal((dataset.n_voxels, decoder.code_dim)) * 0.01).astype(decoder.dtype)
    code_m = np.zeros_like(codes)
    code_v = np.zeros_like(codes)
    code_t = np.zeros(dataset.n_voxels, dtype=np.int64)
    flat = flatten_params(decoder.mlp)
    state = AdamState.zeros_like(flat, lr=config.lr)

    steps_per_epoch = math.ceil(len(valid) / config.batch_voxels)
    total = config.steps if config.steps is not None else config.epochs * steps_per_epoch
    result = TrainResult(decoder, codes)
    step = 0
    epoch_sum, epoch_n = 0.0, 0
    while step < total:
        order = rng.permutation(valid)
        for b in range(steps_per_epoch):
            if step >= total:
                break
            voxels = np.sort(order[b * config.batch_voxels : (b + 1) * config.batch_voxels])
            local, sdf, w, seg = _gather_batch(dataset, voxels, config.samples_per_voxel_per_step, rng)
            losses, pgrads, cgrads = voxel_objective(
                decoder, codes[voxels], local, sdf, w, seg, config.reg_weight
            )
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise NumericalError(f"loss became non-finite at step {step}")
            lr = lr_at(step, total, config)
            state.lr = lr
            flat, state = adam_step(state, flat, flatten_params(pgrads))
            decoder = decoder.with_mlp(unflatten_params(flat))
            code_t[voxels] += 1
            code_lr = lr if config.code_lr is None else lr * config.code_lr / config.lr
            new_c, code_m[voxels], code_v[voxels] = adam_update(
                codes[voxels], cgrads, code_m[voxels], code_v[voxels], code_t[voxels][:, None], code_lr
            )
            codes[voxels] = new_c
            result.step_losses.append(batch_loss)
            result.step_lrs.append(lr)
            epoch_sum += batch_loss
            epoch_n += 1
            step += 1
            if config.log_every and step % config.log_every == 0:
                log.info("step %d/%d loss %.5f lr %.4g", step, total, batch_loss, lr)
        result.epoch_losses.append(epoch_sum / max(epoch_n, 1))
        epoch_sum, epoch_n = 0.0, 0
    result.decoder = decoder
    result.codes = codes
    result.optimizer = state
    return result


def dataset_losses(decoder: DecoderParams, codes: np.ndarray, patches: PatchSet, reg_weight: float, chunk: int = 256):
    """Full-data per-voxel losses (voxels without samples get the regularizer only)."""
    out = reg_weight * np.einsum("ij,ij->i", codes, codes, dtype=np.float64)
    counts = patches.counts
    for s in range(0, patches.n_voxels, chunk):
        vox = np.arange(s, min(s + chunk, patches.n_voxels))
        vox = vox[counts[vox] > 0]
        if not len(vox):
            continue
        lo, hi = patches.offsets[vox[0]], patches.offsets[vox[-1] + 1]
        seg_full = np.repeat(np.arange(len(vox)), counts[vox])
        sl = slice(lo, hi)
        losses, _, _ = voxel_objective(
            decoder, codes[vox], patches.local[sl], patches.sdf[sl], patches.weights[sl], seg_full,
            reg_weight, need_param_grads=False,
        )
        out[vox] = losses
    return out
