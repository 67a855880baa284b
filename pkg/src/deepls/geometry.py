"""Triangle meshes: closest-point queries, signed distance, ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices must be finite")

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        a, b, c = self.corners
        n = np.cross(b - a, c - a)
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def without_degenerate(self, eps: float = 1e-14) -> "TriangleMesh":
        t = self.triangles
        keep = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        keep &= self.areas() > eps
        return TriangleMesh(self.vertices, t[keep])

    def welded(self) -> "TriangleMesh":
        """Merge exactly coincident vertices and drop faces that collapse."""
        uniq, inv = np.unique(self.vertices, axis=0, return_inverse=True)
        t = inv.reshape(-1)[self.triangles]
        keep = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        return TriangleMesh(uniq, t[keep])

    def sample_surface(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Area-uniform surface points and their face normals."""
        areas = self.areas()
        if n <= 0 or areas.sum() <= 0:
            return np.zeros((0, 3)), np.zeros((0, 3))
        face = rng.choice(len(areas), size=n, p=areas / areas.sum())
        r1 = np.sqrt(rng.uniform(size=n))
        r2 = rng.uniform(size=n)
        a, b, c = (x[face] for x in self.corners)
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        return pts, self.face_normals()[face]

    def euler_characteristic(self) -> int:
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(t))
        return int(n_verts - n_edges + len(t))


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``abc`` to ``p`` (all arrays ``(n, 3)``).

    Returns ``(points, feature)`` where feature is 0 for the face interior,
    1/2/3 for vertices a/b/c and 4/5/6 for edges ab/bc/ca.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    feature = np.full(len(p), -1, dtype=np.int64)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, pts, code):
        m = mask & ~done
        out[m] = pts[m] if pts.ndim == 2 else pts
        feature[m] = code
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a, 1)
        assign((d3 >= 0) & (d4 <= d3), b, 2)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab, 4)
        assign((d6 >= 0) & (d5 <= d6), c, 3)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac, 6)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b), 5)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac, 0)
    return out, feature


class MeshSDF:
    """Exact signed distance to a closed, consistently oriented triangle mesh.

    Candidates come from a KD-tree over triangle centroids; a query is
    certified once the best distance is below the k-th centroid distance minus
    the largest circumradius, otherwise k grows up to all triangles. The sign
    uses angle-weighted pseudonormals at vertices and edges.
    """

    def __init__(self, mesh: TriangleMesh):
        mesh = mesh.welded().without_degenerate()
        if len(mesh) == 0:
            raise ValueError("mesh has no non-degenerate triangles")
        self.mesh = mesh
        a, b, c = mesh.corners
        self._a, self._b, self._c = a, b, c
        self.centroids = (a + b + c) / 3.0
        self.radius = float(
            np.max(np.linalg.norm(np.stack([a, b, c]) - self.centroids[None], axis=2))
        )
        self.tree = cKDTree(self.centroids)
        self.face_normals = mesh.face_normals()
        self._build_pseudonormals()

    def _build_pseudonormals(self):
        mesh = self.mesh
        t = mesh.triangles
        fn = self.face_normals
        vn = np.zeros_like(mesh.vertices)
        for k in range(3):
            p0 = mesh.vertices[t[:, k]]
            e1 = mesh.vertices[t[:, (k + 1) % 3]] - p0
            e2 = mesh.vertices[t[:, (k + 2) % 3]] - p0
            cosang = np.einsum("ij,ij->i", e1, e2) / (
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, t[:, k], ang[:, None] * fn)
        self.vertex_normals = vn
        # edge k of a face joins corners (k, k+1): ab, bc, ca
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        keys = np.sort(edges, axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        en = np.zeros((len(uniq), 3))
        np.add.at(en, inv.ravel(), np.concatenate([fn, fn, fn]))
        self.edge_normals = en[inv.ravel()].reshape(3, len(t), 3)

    def _eval(self, pts, cand):
        """Distance, closest point and feature for each (point, candidate face)."""
        cp, feat = closest_point_on_triangles(pts, self._a[cand], self._b[cand], self._c[cand])
        return np.linalg.norm(pts - cp, axis=1), cp, feat

    def closest(self, points, k: int = 16, budget: int = 1 << 22):
        """Closest face, point and feature for each query point.

        ``budget`` caps the number of (point, face) pairs evaluated at once.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, n_faces = len(pts), len(self.centroids)
        best_d = np.full(n, np.inf)
        best_f = np.zeros(n, dtype=np.int64)
        best_cp = np.zeros((n, 3))
        best_feat = np.zeros(n, dtype=np.int64)
        todo = np.arange(n)
        while len(todo):
            kk = min(k, n_faces)
            step = max(budget // kk, 1)
            still = []
            for s in range(0, len(todo), step):
                sub = todo[s : s + step]
                cd, ci = self.tree.query(pts[sub], k=kk)
                cd = cd.reshape(len(sub), kk)
                ci = ci.reshape(len(sub), kk)
                d, cp, feat = self._eval(pts[np.repeat(sub, kk)], ci.ravel())
                d = d.reshape(len(sub), kk)
                j = np.argmin(d, axis=1)
                rows = np.arange(len(sub))
                best_d[sub] = d[rows, j]
                best_f[sub] = ci[rows, j]
                flat = rows * kk + j
                best_cp[sub] = cp[flat]
                best_feat[sub] = feat[flat]
                if kk < n_faces:
                    still.append(sub[best_d[sub] > cd[:, -1] - self.radius])
            todo = np.concatenate(still) if still else np.zeros(0, dtype=np.int64)
            k *= 4
        return best_d, best_f, best_cp, best_feat

    def __call__(self, points) -> np.ndarray:
        d, face, cp, feat = self.closest(points)
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        t = self.mesh.triangles[face]
        normal = self.face_normals[face].copy()
        for code, corner in ((1, 0), (2, 1), (3, 2)):
            m = feat == code
            normal[m] = self.vertex_normals[t[m, corner]]
        for code, edge in ((4, 0), (5, 1), (6, 2)):
            m = feat == code
            normal[m] = self.edge_normals[edge, face[m]]
        side = np.einsum("ij,ij->i", pts - cp, normal)
        return np.where(side < 0, -d, d)


def ray_triangle_hits(origins, dirs, a, b, c, eps: float = 1e-12):
    """Moller-Trumbore for ray batches against triangle batches (broadcasting).

    Returns ray parameters ``t`` (inf where there is no forward hit).
    """
    e1 = b - a
    e2 = c - a
    pvec = np.cross(dirs, e2)
    det = np.einsum("...j,...j->...", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = origins - a
        u = np.einsum("...j,...j->...", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("...j,...j->...", dirs, qvec) * inv
        t = np.einsum("...j,...j->...", e2, qvec) * inv
        ok = (np.abs(det) > eps) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return np.where(ok, t, np.inf)


def raycast_mesh(mesh: TriangleMesh, origins, dirs, chunk: int = 256) -> np.ndarray:
    """Nearest forward hit distance along each ray (inf for misses)."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    a, b, c = mesh.corners
    out = np.full(len(dirs), np.inf)
    for s in range(0, len(dirs), chunk):
        o = np.broadcast_to(origins, dirs.shape)[s : s + chunk, None, :]
        d = dirs[s : s + chunk, None, :]
        t = ray_triangle_hits(o, d, a[None], b[None], c[None])
        out[s : s + chunk] = t.min(axis=1)
    return out


def inside_by_parity(mesh: TriangleMesh, points, direction=(0.5773, 0.5774, 0.5775)) -> np.ndarray:
    """Ray-parity inside test (independent of the closest-point machinery)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    a, b, c = mesh.corners
    counts = np.zeros(len(pts), dtype=np.int64)
    for s in range(0, len(pts), 64):
        t = ray_triangle_hits(pts[s : s + 64, None, :], d[None, None, :], a[None], b[None], c[None])
        counts[s : s + 64] = np.isfinite(t).sum(axis=1)
    return counts % 2 == 1


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron with vertices projected onto the sphere (outward winding)."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
        (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
        (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
        (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(np.asarray(v) * radius + np.asarray(center), np.asarray(f, dtype=np.int64))
