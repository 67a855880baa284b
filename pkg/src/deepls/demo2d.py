"""2D receptive-field study: local codes on a pixel grid of cells.

Scenes are unions of circles, rectangles and triangles in an image of
``image_size`` pixels. For each receptive radius a decoder is trained on
several scenes with dense samples, then a held-out scene is encoded from
sparse samples and its SDF error (pixels) is measured inside the allocated
cells. A cell's receptive field is the disc of radius ``radius * cell_size``
around its center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import decode_tanh
from .grid import _pack
from .inference import EncodeConfig, encode_patches
from .training import PatchSet, TrainConfig, train_prior

RADII = (1.0, 1.25, 1.5, 1.75, 2.0)


@dataclass
class Shape2D:
    kind: str  # circle | rect | triangle
    params: np.ndarray

    def sdf(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "circle":
            cx, cy, r = self.params
            return np.hypot(p[:, 0] - cx, p[:, 1] - cy) - r
        if self.kind == "rect":
            cx, cy, hw, hh, ang = self.params
            c, s = np.cos(ang), np.sin(ang)
            x = c * (p[:, 0] - cx) + s * (p[:, 1] - cy)
            y = -s * (p[:, 0] - cx) + c * (p[:, 1] - cy)
            q = np.stack([np.abs(x) - hw, np.abs(y) - hh], axis=1)
            return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)
        return polygon_sdf(self.params.reshape(-1, 2), p)


def polygon_sdf(verts: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Exact signed distance to a convex polygon (vertices in any orientation)."""
    d = np.full(len(p), np.inf)
    signs = []
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        e = b - a
        w = p - a
        t = np.clip((w @ e) / (e @ e), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(w - t[:, None] * e, axis=1))
        signs.append(e[0] * w[:, 1] - e[1] * w[:, 0])
    signs = np.stack(signs, axis=1)
    inside = np.all(signs > 0, axis=1) | np.all(signs < 0, axis=1)
    return np.where(inside, -d, d)


def boundary_points(shape: Shape2D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Arc-length uniform points on one primitive's outline."""
    if shape.kind == "circle":
        cx, cy, r = shape.params
        t = rng.uniform(0, 2 * np.pi, n)
        return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)
    if shape.kind == "rect":
        cx, cy, hw, hh, ang = shape.params
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        c, s = np.cos(ang), np.sin(ang)
        verts = local @ np.array([[c, s], [-s, c]]) + [cx, cy]
    else:
        verts = shape.params.reshape(-1, 2)
    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.linalg.norm(edges, axis=1)
    k = rng.choice(len(verts), size=n, p=lengths / lengths.sum())
    return verts[k] + rng.uniform(0, 1, (n, 1)) * edges[k]


def outline_length(shape: Shape2D) -> float:
    if shape.kind == "circle":
        return float(2 * np.pi * shape.params[2])
    if shape.kind == "rect":
        return float(4 * (shape.params[2] + shape.params[3]))
    v = shape.params.reshape(-1, 2)
    return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())


def surface_points2d(shapes: list[Shape2D], n: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the outline of the union (parts hidden inside another shape are dropped)."""
    lengths = np.array([outline_length(s) for s in shapes])
    out, have = [], 0
    while have < n:
        counts = rng.multinomial(2 * (n - have) + 16, lengths / lengths.sum())
        pts = np.concatenate([boundary_points(s, c, rng) for s, c in zip(shapes, counts)])
        pts = pts[scene_sdf2d(shapes, pts) > -1e-9]
        out.append(pts)
        have += len(pts)
    pts = np.concatenate(out)
    return pts[rng.permutation(len(pts))[:n]]


def scene_sdf2d(shapes: list[Shape2D], p: np.ndarray) -> np.ndarray:
    return np.min([s.sdf(p) for s in shapes], axis=0)


def random_scene2d(rng: np.random.Generator, image_size: float, n_shapes: int = 3) -> list[Shape2D]:
    shapes = []
    lo, hi = 0.2 * image_size, 0.8 * image_size
    for _ in range(n_shapes):
        kind = ("circle", "rect", "triangle")[rng.integers(3)]
        cx, cy = rng.uniform(lo, hi, 2)
        size = rng.uniform(0.08, 0.2) * image_size
        if kind == "circle":
            params = np.array([cx, cy, size])
        elif kind == "rect":
            params = np.array([cx, cy, size, size * rng.uniform(0.4, 1.0), rng.uniform(0, np.pi)])
        else:
            ang = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.1, 4.2]) + rng.uniform(-0.4, 0.4, 3)
            params = np.stack([cx + size * 1.3 * np.cos(ang), cy + size * 1.3 * np.sin(ang)], axis=1).ravel()
        shapes.append(Shape2D(kind, params))
    return shapes


@dataclass
class Demo2dConfig:
    image_size: int = 64
    cell_size: float = 8.0
    radii: tuple = RADII
    train_scenes: int = 8
    train_samples_per_cell: int = 1000
    test_samples_per_cell: int = 100
    eval_points_per_cell: int = 400
    sigmas: tuple = (0.3, 0.05)  # perturbation scales in cell units
    code_dim: int = 125
    hidden_dim: int = 128
    train_steps: int = 1500
    encode_iterations: int = 300
    seed: int = 0
    train: TrainConfig | None = field(default=None, repr=False)


class CellGrid2D:
    """Cells of an image that lie near the zero level set."""

    def __init__(self, shapes, image_size: int, cell_size: float):
        n = int(np.ceil(image_size / cell_size))
        ij = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), axis=-1).reshape(-1, 2)
        centers = (ij + 0.5) * cell_size
        near = np.abs(scene_sdf2d(shapes, centers)) <= cell_size * np.sqrt(0.5)
        self.cell_size = cell_size
        self.n = n
        self.indices = ij[near]
        self.centers = centers[near]
        self._lookup = np.full((n, n), -1, dtype=np.int64)
        self._lookup[self.indices[:, 0], self.indices[:, 1]] = np.arange(len(self.indices))

    def __len__(self) -> int:
        return len(self.indices)

    def keys(self) -> np.ndarray:
        return _pack(np.concatenate([self.indices, np.zeros((len(self), 1), dtype=np.int64)], axis=1))

    def containing(self, p: np.ndarray) -> np.ndarray:
        ij = np.floor(p / self.cell_size).astype(np.int64)
        ok = np.all((ij >= 0) & (ij < self.n), axis=1)
        out = np.full(len(p), -1, dtype=np.int64)
        out[ok] = self._lookup[ij[ok, 0], ij[ok, 1]]
        return out

    def patches(self, positions: np.ndarray, sdf: np.ndarray, radius: float) -> PatchSet:
        """Samples within ``radius * cell_size`` of each cell center, grouped per cell."""
        r = radius * self.cell_size
        sid, rows = [], []
        for row, c in enumerate(self.centers):
            hit = np.nonzero(np.hypot(positions[:, 0] - c[0], positions[:, 1] - c[1]) <= r)[0]
            sid.append(hit)
            rows.append(np.full(len(hit), row))
        sid = np.concatenate(sid)
        rows = np.concatenate(rows)
        counts = np.bincount(rows, minlength=len(self))
        local = positions[sid] - self.centers[rows]
        return PatchSet(local, sdf[sid], np.ones(len(sid)), np.concatenate([[0], np.cumsum(counts)]), self.cell_size)


def near_surface_samples(shapes, n: int, cell_size: float, sigmas, rng: np.random.Generator):
    """Outline points perturbed by Gaussians at two scales (alternating)."""
    pts = surface_points2d(shapes, n, rng)
    scale = np.where(np.arange(n) % 2 == 0, sigmas[0], sigmas[1]) * cell_size
    pts = pts + rng.standard_normal((n, 2)) * scale[:, None]
    return pts, scene_sdf2d(shapes, pts)


def predict(decoder, cells: CellGrid2D, codes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """SDF in pixels from the containing cell's code; NaN outside allocated cells."""
    rows = cells.containing(pts)
    out = np.full(len(pts), np.nan)
    hit = rows >= 0
    local = pts[hit] - cells.centers[rows[hit]]
    out[hit] = decoder.output_scale * decode_tanh(decoder, local, codes[rows[hit]]).astype(np.float64)
    return out


@dataclass
class RadiusResult:
    radius: float
    test_error_px: float
    train_loss: float
    cells: int
    codes: np.ndarray = field(repr=False)
    decoder: object = field(repr=False)


def run_radius(config: Demo2dConfig, radius: float, train_scenes, test_scene, test_cells: CellGrid2D) -> RadiusResult:
    rng = np.random.default_rng([config.seed, 1])
    parts = []
    for shapes in train_scenes:
        cells = CellGrid2D(shapes, config.image_size, config.cell_size)
        n = config.train_samples_per_cell * len(cells)
        pts, sdf = near_surface_samples(shapes, n, config.cell_size, config.sigmas, rng)
        parts.append(cells.patches(pts, sdf, radius))
    dataset = PatchSet.concat(parts)
    tcfg = config.train or TrainConfig(
        steps=config.train_steps, seed=config.seed, code_dim=config.code_dim, hidden_dim=config.hidden_dim, pos_dim=2,
    )
    trained = train_prior(dataset, tcfg)
    decoder = trained.decoder

    trng = np.random.default_rng([config.seed, 2])
    n = config.test_samples_per_cell * len(test_cells)
    pts, sdf = near_surface_samples(test_scene, n, config.cell_size, config.sigmas, trng)
    patches = test_cells.patches(pts, sdf, radius)
    init = (np.random.default_rng([config.seed, 3]).standard_normal((len(test_cells), config.code_dim)) * 0.01)
    codes, _ = encode_patches(
        decoder, init.astype(decoder.dtype), patches, test_cells.keys(),
        EncodeConfig(iterations=config.encode_iterations, seed=config.seed, early_exit=False),
    )
    err = evaluation_error(decoder, test_cells, codes, test_scene, config)
    return RadiusResult(radius, err, float(np.mean(trained.step_losses[-100:])), len(test_cells), codes, decoder)


def evaluation_error(decoder, cells: CellGrid2D, codes, shapes, config: Demo2dConfig) -> float:
    """Mean absolute SDF error (pixels) on held-out near-surface points inside allocated cells."""
    rng = np.random.default_rng([config.seed, 4])
    pts, gt = near_surface_samples(shapes, config.eval_points_per_cell * len(cells), config.cell_size, config.sigmas, rng)
    pred = predict(decoder, cells, codes, pts)
    ok = np.isfinite(pred)
    return float(np.mean(np.abs(pred[ok] - gt[ok])))


def run_sweep(config: Demo2dConfig | None = None):
    """Returns ``(results per radius, test scene, test cells)``."""
    config = config or Demo2dConfig()
    rng = np.random.default_rng(config.seed)
    train_scenes = [random_scene2d(rng, config.image_size) for _ in range(config.train_scenes)]
    test_scene = random_scene2d(rng, config.image_size)
    cells = CellGrid2D(test_scene, config.image_size, config.cell_size)
    results = [run_radius(config, r, train_scenes, test_scene, cells) for r in config.radii]
    return results, test_scene, cells


def is_monotone(values) -> bool:
    d = np.diff(np.asarray(values, dtype=np.float64))
    return bool(np.all(d <= 0) or np.all(d >= 0))
