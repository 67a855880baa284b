"""Marching-cubes extraction from SDF query functions, with an observation mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import CORNERS, EDGE_TABLE, EDGES, TRI_TABLE
from .geometry import TriangleMesh

_TRI = np.full((256, 16), -1, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _TRI[_case, : len(_row)] = _row
_CORNERS = np.array(CORNERS, dtype=np.int64)
# per edge: lattice offset of its lower endpoint and its axis
_EDGE_START = np.array([np.minimum(_CORNERS[a], _CORNERS[b]) for a, b in EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_CORNERS[b] - _CORNERS[a]))) for a, b in EDGES])


@dataclass
class ExtractionConfig:
    sample_resolution: float
    mask_radius: float = np.inf
    iso_value: float = 0.0

    def __post_init__(self):
        if self.sample_resolution <= 0:
            raise ValueError("sample_resolution must be positive")
        if self.mask_radius <= 0:
            raise ValueError("mask_radius must be positive")


class ObservationIndex:
    """Nearest-observation distances with an exact KD-tree backend."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.tree = cKDTree(self.points) if len(self.points) else None

    def distance(self, query, upper_bound: float = np.inf) -> np.ndarray:
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if self.tree is None:
            return np.full(len(q), np.inf)
        d, _ = self.tree.query(q, distance_upper_bound=upper_bound)
        return d


def nearest_observation_distance(points, query) -> np.ndarray | float:
    """Euclidean distance from ``query`` to the nearest point (inf if none)."""
    single = np.ndim(query) == 1
    d = ObservationIndex(points).distance(query)
    return float(d[0]) if single else d


@dataclass
class LatticeStats:
    cells: int = 0
    masked_cells: int = 0
    unavailable_cells: int = 0


def lattice_axes(lo, hi, h):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    n = np.floor((hi - lo) / h + 1e-9).astype(np.int64) + 1
    return [lo[i] + h * np.arange(n[i]) for i in range(3)]


def extract(
    source,
    region,
    config: ExtractionConfig,
    observations=None,
    stats: LatticeStats | None = None,
    chunk: int = 1 << 18,
) -> TriangleMesh:
    """Polygonise the zero level set of ``source`` over ``region = (lo, hi)``.

    ``source`` maps an ``(n, 3)`` array to SDF values with NaN marking
    unavailable points. Cells with an unavailable corner, or a corner farther
    than ``mask_radius`` from every observation, are skipped. A corner value
    equal to the iso level counts as outside.
    """
    lo, hi = region
    xs, ys, zs = lattice_axes(lo, hi, config.sample_resolution)
    shape = (len(xs), len(ys), len(zs))
    if min(shape) < 2:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.empty(len(grid))
    for s in range(0, len(grid), chunk):
        values[s : s + chunk] = source(grid[s : s + chunk])
    values = values.reshape(shape) - config.iso_value
    usable = np.isfinite(values)
    if observations is not None and np.isfinite(config.mask_radius):
        index = observations if isinstance(observations, ObservationIndex) else ObservationIndex(observations)
        d = index.distance(grid, upper_bound=config.mask_radius * (1 + 1e-12) + 1e-300)
        usable &= (d <= config.mask_radius).reshape(shape)

    inside = values < 0
    nx, ny, nz = shape
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    cell_ok = np.ones_like(case, dtype=bool)
    cell_avail = np.ones_like(case, dtype=bool)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        sl = (slice(dx, dx + nx - 1), slice(dy, dy + ny - 1), slice(dz, dz + nz - 1))
        case |= inside[sl].astype(np.int64) << c
        cell_ok &= usable[sl]
        cell_avail &= np.isfinite(values[sl])
    if stats is not None:
        stats.cells = int(case.size)
        stats.unavailable_cells = int((~cell_avail).sum())
        stats.masked_cells = int((cell_avail & ~cell_ok).sum())
    edge_table = np.asarray(EDGE_TABLE)
    active = np.nonzero(cell_ok & (edge_table[case] != 0))
    cells = np.stack(active, axis=1)
    tri = _TRI[case[active]]  # (m, 16)
    slots = tri[:, :15].reshape(len(cells), 5, 3)
    has_tri = slots[:, :, 0] >= 0
    cell_of = np.repeat(np.arange(len(cells)), 5)[has_tri.ravel()]
    edges = slots.reshape(-1, 3)[has_tri.ravel()]  # (t, 3) local edge ids
    if not len(edges):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    start = cells[cell_of][:, None, :] + _EDGE_START[edges]  # (t, 3, 3)
    axis = _EDGE_AXIS[edges]
    keys = ((start[..., 0] * ny + start[..., 1]) * nz + start[..., 2]) * 3 + axis
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    lin = uniq // 3
    ax = uniq % 3
    i0 = np.stack(np.unravel_index(lin, shape), axis=1)
    i1 = i0.copy()
    i1[np.arange(len(ax)), ax] += 1
    v0 = values[tuple(i0.T)]
    v1 = values[tuple(i1.T)]
    t = v0 / (v0 - v1)
    axes = (xs, ys, zs)
    p0 = np.stack([axes[k][i0[:, k]] for k in range(3)], axis=1)
    p1 = np.stack([axes[k][i1[:, k]] for k in range(3)], axis=1)
    verts = p0 + t[:, None] * (p1 - p0)
    faces = inv.reshape(-1, 3)
    # table winding is clockwise seen from outside; flip to counter-clockwise
    return TriangleMesh(verts, faces[:, ::-1].copy())


def grid_source(decoder, grid):
    """Adapter: a latent grid as an extraction source."""
    from .inference import query_sdf_batch

    return lambda pts: query_sdf_batch(decoder, grid, pts)


def grid_region(grid, pad_voxels: float = 0.0):
    lo = grid.center(grid.indices.min(axis=0)) - (0.5 + pad_voxels) * grid.voxel_size
    hi = grid.center(grid.indices.max(axis=0)) + (0.5 + pad_voxels) * grid.voxel_size
    return lo, hi
