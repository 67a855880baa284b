"""File formats: meshes (OBJ, PLY), depth frames, checkpoints and CSV tables.

Binary layouts are little-endian.

Depth frame (``.dlsd``)::

    b"DLSD" | u32 width | u32 height | f32 fx, fy, cx, cy
    | f32 x 16 camera-to-world (row-major) | f32 depth (row-major)

Checkpoint (``.dls``)::

    b"DLS1" | u32 version | u32 flags (1: optimizer state, 2: latent grid)
    | u32 code_dim, pos_dim, hidden_dim, num_layers, output_dim
    | f64 leaky_slope, truncation, voxel_size, tanh_clamp
    | per layer: f32 weights (out, in) then f32 biases
    | [optimizer] u64 step | f64 lr, beta1, beta2, eps | f32 first moments | f32 second moments
    | [grid] f64 x 3 origin | f64 voxel_size | u64 count | count x (i32 x 3 index, f32 x code_dim code)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import DepthFrame
from .decoder import DecoderParams
from .geometry import TriangleMesh
from .grid import LatentGrid
from .mlp import AdamState, LayerParams, MlpSpec
from .sampling import SdfSamples

CHECKPOINT_MAGIC = b"DLS1"
CHECKPOINT_VERSION = 1
DEPTH_MAGIC = b"DLSD"
_FLAG_OPTIMIZER = 1
_FLAG_GRID = 2


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


class UnsupportedVersionError(FormatError):
    pass


# -- meshes ------------------------------------------------------------------


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def load_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs three coordinates")
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    if len(parts) < 4:
                        raise ValueError("face needs at least three vertices")
                    poly = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        if i == 0:
                            raise ValueError("OBJ indices are 1-based")
                        # negative indices count back from the latest vertex
                        i = i - 1 if i > 0 else len(verts) + i
                        if not 0 <= i < len(verts):
                            raise ValueError(f"vertex index {tok} out of range (have {len(verts)})")
                        poly.append(i)
                    faces.extend(_fan(poly))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(v, f)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.triangles + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path) -> TriangleMesh:
    """Binary little-endian PLY with a vertex element (x, y, z) and a face list."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = memoryview(data)[end + len(b"end_header\n") :]
    elements = []
    for lineno, line in enumerate(header, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "binary_little_endian":
            raise FormatError(f"{path}:{lineno}: only binary_little_endian PLY is supported")
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}:{lineno}: property before element")
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]], None, None))
            except (KeyError, IndexError):
                raise FormatError(f"{path}:{lineno}: bad property line") from None
    offset = 0
    verts = faces = None
    for name, count, props in elements:
        if all(p[1] != "list" for p in props):
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            if offset + dt.itemsize * count > len(body):
                raise FormatError(f"{path}: truncated {name} data")
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        tris = []
        for _ in range(count):
            for pname, kind, ctype, itype in props:
                if kind != "list":
                    offset += np.dtype(kind).itemsize
                    continue
                csize = np.dtype(ctype).itemsize
                if offset + csize > len(body):
                    raise FormatError(f"{path}: truncated {name} data")
                n = int(np.frombuffer(body, "<" + ctype, 1, offset)[0])
                offset += csize
                isize = np.dtype(itype).itemsize
                if offset + n * isize > len(body):
                    raise FormatError(f"{path}: truncated {name} data")
                idx = np.frombuffer(body, "<" + itype, n, offset).astype(np.int64)
                offset += n * isize
                if name == "face" and pname in ("vertex_indices", "vertex_index"):
                    if n < 3:
                        raise FormatError(f"{path}: face with {n} vertices")
                    tris.extend(_fan(list(idx)))
        if name == "face":
            faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if verts is None:
        raise FormatError(f"{path}: no vertex element")
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else faces
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise FormatError(f"{path}: face index out of range")
    return TriangleMesh(verts, faces)


def save_ply(mesh: TriangleMesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(len(mesh.triangles), dtype=face_dt)
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        fh.write(faces.tobytes())


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply(path)
    if suffix == ".obj":
        return load_obj(path)
    raise FormatError(f"{path}: unknown mesh extension {suffix!r}")


def save_mesh(mesh: TriangleMesh, path) -> None:
    """OBJ unless the path ends in ``.ply``."""
    if Path(path).suffix.lower() == ".ply":
        save_ply(mesh, path)
    else:
        save_obj(mesh, path)


# -- depth frames --------------------------------------------------------------

_DEPTH_HEADER = struct.Struct("<4sII4f16f")


def save_depth(frame: DepthFrame, path) -> None:
    head = _DEPTH_HEADER.pack(
        DEPTH_MAGIC, frame.width, frame.height, frame.fx, frame.fy, frame.cx, frame.cy,
        *frame.pose.astype(np.float32).ravel(),
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(frame.depth, dtype="<f4").tobytes())


def load_depth(path) -> DepthFrame:
    data = Path(path).read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise FormatError(f"{path}: truncated depth header")
    vals = _DEPTH_HEADER.unpack_from(data)
    if vals[0] != DEPTH_MAGIC:
        raise FormatError(f"{path}: bad magic {vals[0]!r}")
    w, h = vals[1], vals[2]
    if w == 0 or h == 0:
        raise FormatError(f"{path}: empty {w}x{h} frame")
    need = _DEPTH_HEADER.size + 4 * w * h
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", offset=_DEPTH_HEADER.size).reshape(h, w)
    pose = np.asarray(vals[7:23], dtype=np.float32).reshape(4, 4)
    try:
        return DepthFrame(w, h, vals[3], vals[4], vals[5], vals[6], pose, depth.copy())
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- checkpoints ---------------------------------------------------------------

_CKPT_HEADER = struct.Struct("<4sII5I4d")
_ADAM_HEADER = struct.Struct("<Q4d")
_GRID_HEADER = struct.Struct("<4dQ")


@dataclass
class Checkpoint:
    decoder: DecoderParams
    optimizer: AdamState | None = None
    grid: LatentGrid | None = None


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(path, decoder: DecoderParams, optimizer: AdamState | None = None, grid: LatentGrid | None = None):
    if grid is not None and grid.code_dim != decoder.code_dim:
        raise FormatError(f"grid code_dim {grid.code_dim} != decoder code_dim {decoder.code_dim}")
    spec = decoder.spec
    flags = (_FLAG_OPTIMIZER if optimizer is not None else 0) | (_FLAG_GRID if grid is not None else 0)
    parts = [
        _CKPT_HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, flags,
            decoder.code_dim, decoder.pos_dim, spec.hidden_dim, spec.num_layers, spec.output_dim,
            spec.leaky_slope, decoder.truncation, decoder.voxel_size, decoder.tanh_clamp,
        )
    ]
    for layer in decoder.mlp:
        parts += [_f32(layer.weights), _f32(layer.biases)]
    if optimizer is not None:
        parts.append(_ADAM_HEADER.pack(optimizer.step_count, optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps))
        parts += [_f32(m) for m in optimizer.first_moment]
        parts += [_f32(v) for v in optimizer.second_moment]
    if grid is not None:
        parts.append(_GRID_HEADER.pack(*grid.origin, grid.voxel_size, len(grid)))
        entry = np.dtype([("idx", "<i4", (3,)), ("code", "<f4", (grid.code_dim,))])
        rows = np.empty(len(grid), dtype=entry)
        rows["idx"] = grid.indices
        rows["code"] = grid.codes
        parts.append(rows.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {r.data[:4]!r}")
    (_, version, flags, code_dim, pos_dim, hidden, n_layers, out_dim,
     slope, trunc, voxel, clamp) = r.unpack(_CKPT_HEADER)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    if flags & ~(_FLAG_OPTIMIZER | _FLAG_GRID):
        raise FormatError(f"{path}: unknown flags {flags:#x}")
    if min(code_dim, pos_dim, hidden, n_layers, out_dim) == 0 or not (trunc > 0 and voxel > 0):
        raise FormatError(f"{path}: inconsistent decoder header")
    spec = MlpSpec(code_dim + pos_dim, hidden, n_layers, out_dim, slope, np.float32)
    mlp = [LayerParams(r.floats((o, i)), r.floats((o,))) for o, i in spec.layer_sizes()]
    decoder = DecoderParams(mlp, spec, code_dim, trunc, voxel, clamp, pos_dim)
    optimizer = grid = None
    if flags & _FLAG_OPTIMIZER:
        step, lr, b1, b2, eps = r.unpack(_ADAM_HEADER)
        shapes = [a.shape for layer in mlp for a in (layer.weights, layer.biases)]
        first = [r.floats(s) for s in shapes]
        second = [r.floats(s) for s in shapes]
        optimizer = AdamState(first, second, step, lr, b1, b2, eps)
    if flags & _FLAG_GRID:
        ox, oy, oz, gvox, count = r.unpack(_GRID_HEADER)
        if not gvox > 0:
            raise FormatError(f"{path}: non-positive grid voxel size")
        entry = np.dtype([("idx", "<i4", (3,)), ("code", "<f4", (code_dim,))])
        rows = np.frombuffer(r.take(entry.itemsize * count), dtype=entry)
        grid = LatentGrid(gvox, code_dim, (ox, oy, oz))
        grid.set_entries(rows["idx"].astype(np.int64), rows["code"].astype(np.float32))
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(decoder, optimizer, grid)


# -- CSV tables ------------------------------------------------------------------


def save_samples(samples: SdfSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "sdf", "weight"])
        for p, s, wt in zip(samples.positions.tolist(), samples.sdf.tolist(), samples.weights.tolist()):
            w.writerow([repr(p[0]), repr(p[1]), repr(p[2]), repr(s), repr(wt)])


def load_samples(path) -> SdfSamples:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x", "y", "z", "sdf", "weight"]:
            raise FormatError(f"{path}: expected header x,y,z,sdf,weight, found {header}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 columns, found {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return SdfSamples(arr[:, :3], arr[:, 3], arr[:, 4])


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """Write dict rows with a header; floats keep full precision."""
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_losses(path, losses, lrs=None) -> None:
    rows = [{"step": i, "loss": float(x)} for i, x in enumerate(losses)]
    if lrs is not None:
        for row, lr in zip(rows, lrs):
            row["lr"] = float(lr)
    write_csv(path, rows, ["step", "loss", "lr"] if lrs is not None else ["step", "loss"])
