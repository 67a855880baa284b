"""Sparse voxel partition holding one latent code per allocated voxel.

Voxels are half-open cells ``[origin + k*V, origin + (k+1)*V)`` per axis. A
sample belongs to the extended field of voxel ``k`` when, on every axis,
``center - f*V <= x < center + f*V`` with ``f`` the receptive radius factor.
"""

from __future__ import annotations

import itertools

import numpy as np

from .mlp import ContractError

RECEPTIVE_FACTOR = 1.5
CODE_INIT_STD = 0.01

_KEY_BIAS = 1 << 20
_KEY_BASE = 1 << 21


def _pack(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64) + _KEY_BIAS
    if idx.size and (idx.min() < 0 or idx.max() >= _KEY_BASE):
        raise ContractError("voxel index outside the supported range of +-2^20")
    return (idx[..., 0] * _KEY_BASE + idx[..., 1]) * _KEY_BASE + idx[..., 2]


class LatentGrid:
    def __init__(
        self,
        voxel_size: float,
        code_dim: int,
        origin=(0.0, 0.0, 0.0),
        receptive_radius_factor: float = RECEPTIVE_FACTOR,
        init_std: float = CODE_INIT_STD,
        seed: int = 0,
        dtype=np.float32,
    ):
        if voxel_size <= 0:
            raise ContractError(f"voxel_size must be positive, got {voxel_size}")
        self.voxel_size = float(voxel_size)
        self.code_dim = int(code_dim)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.receptive_radius_factor = float(receptive_radius_factor)
        self.init_std = float(init_std)
        self.seed = int(seed)
        self.dtype = dtype
        self.indices = np.zeros((0, 3), dtype=np.int64)
        self.codes = np.zeros((0, self.code_dim), dtype=dtype)
        self._keys = np.zeros(0, dtype=np.int64)
        self._order = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.indices)

    def copy(self) -> "LatentGrid":
        g = LatentGrid(
            self.voxel_size, self.code_dim, self.origin, self.receptive_radius_factor,
            self.init_std, self.seed, self.dtype,
        )
        g.set_entries(self.indices.copy(), self.codes.copy())
        return g

    def set_entries(self, indices: np.ndarray, codes: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        codes = np.asarray(codes, dtype=self.dtype).reshape(-1, self.code_dim)
        if len(indices) != len(codes):
            raise ContractError("indices and codes differ in length")
        self.indices = indices
        self.codes = codes
        self._keys = _pack(indices)
        self._order = np.argsort(self._keys, kind="stable")
        if len(np.unique(self._keys)) != len(self._keys):
            raise ContractError("duplicate voxel indices")

    # -- coordinates -------------------------------------------------------

    def voxel_coords(self, world_pos) -> np.ndarray:
        """Continuous voxel coordinates ``(x - origin) / V``."""
        return (np.asarray(world_pos, dtype=np.float64) - self.origin) / self.voxel_size

    def containing_index(self, world_pos) -> np.ndarray:
        return np.floor(self.voxel_coords(world_pos)).astype(np.int64)

    def center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def to_local(self, idx, world_pos) -> np.ndarray:
        """World position relative to the voxel center (scene units)."""
        return np.asarray(world_pos, dtype=np.float64) - self.center(idx)

    # -- allocation --------------------------------------------------------

    def _init_code(self, idx) -> np.ndarray:
        i, j, k = (int(v) + _KEY_BIAS for v in idx)
        rng = np.random.default_rng([self.seed, i, j, k])
        return (rng.standard_normal(self.code_dim) * self.init_std).astype(self.dtype)

    def allocate(self, points, dilation: int = 0) -> set[tuple[int, int, int]]:
        """Allocate voxels containing ``points`` (plus a dilation shell).

        Codes of new voxels are drawn from a seeded per-voxel Gaussian, so the
        result is independent of point order. Returns all allocated indices.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points):
            cells = np.unique(self.containing_index(points), axis=0)
            if dilation > 0:
                r = range(-dilation, dilation + 1)
                offs = np.array(list(itertools.product(r, r, r)), dtype=np.int64)
                cells = np.unique((cells[:, None, :] + offs[None]).reshape(-1, 3), axis=0)
            new = cells[self.rows_for_indices(cells) < 0]
            if len(new):
                codes = np.stack([self._init_code(c) for c in new])
                all_idx = np.concatenate([self.indices, new])
                all_codes = np.concatenate([self.codes, codes])
                order = np.lexsort(all_idx.T[::-1])
                self.set_entries(all_idx[order], all_codes[order])
        return {tuple(int(v) for v in idx) for idx in self.indices}

    def rows_for_indices(self, idx) -> np.ndarray:
        """Row of each voxel index in ``codes``, or -1 when unallocated."""
        keys = _pack(np.asarray(idx, dtype=np.int64).reshape(-1, 3))
        if len(self._keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        sorted_keys = self._keys[self._order]
        pos = np.searchsorted(sorted_keys, keys)
        pos_c = np.minimum(pos, len(sorted_keys) - 1)
        hit = sorted_keys[pos_c] == keys
        return np.where(hit, self._order[pos_c], -1)

    # -- queries -----------------------------------------------------------

    def voxel_for_query(self, world_pos):
        """Allocated voxel containing ``world_pos`` or None."""
        idx = self.containing_index(world_pos)
        row = self.rows_for_indices(idx[None])[0]
        return tuple(int(v) for v in idx) if row >= 0 else None

    def query_rows(self, positions) -> np.ndarray:
        """Vectorised containing-voxel rows (-1 where unallocated)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        return self.rows_for_indices(self.containing_index(positions))

    def voxels_for_sample(self, world_pos, factor: float | None = None) -> list[tuple[int, int, int]]:
        _, rows = self.assign(np.asarray(world_pos, dtype=np.float64)[None], factor)
        return [tuple(int(v) for v in self.indices[r]) for r in rows]

    def assign(self, positions, factor: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All (sample, voxel row) pairs with the sample in the voxel's extended field.

        Pairs are sorted by voxel row, then by sample index.
        """
        f = self.receptive_radius_factor if factor is None else float(factor)
        u = self.voxel_coords(np.asarray(positions, dtype=np.float64).reshape(-1, 3))
        # k with (k + 0.5) - f <= u < (k + 0.5) + f; the floors only bracket the
        # range (u - 0.5 can round), membership is decided by the exact bounds
        kmin = np.floor(u - 0.5 - f).astype(np.int64)
        kmax = np.floor(u - 0.5 + f).astype(np.int64) + 1
        span = int(np.max(kmax - kmin)) + 1 if len(u) else 0
        sample_ids, rows = [], []
        for off in itertools.product(range(span), repeat=3):
            cand = kmin + np.array(off, dtype=np.int64)
            c = cand + 0.5
            ok = np.all((cand <= kmax) & (c - f <= u) & (u < c + f), axis=1)
            if not ok.any():
                continue
            sid = np.nonzero(ok)[0]
            r = self.rows_for_indices(cand[sid])
            hit = r >= 0
            sample_ids.append(sid[hit])
            rows.append(r[hit])
        if not sample_ids:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        sample_ids = np.concatenate(sample_ids)
        rows = np.concatenate(rows)
        order = np.lexsort((sample_ids, rows))
        return sample_ids[order], rows[order]
