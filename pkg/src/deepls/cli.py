"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every run writes a JSON manifest beside its outputs; ``deepls replay`` re-runs
it into a new directory and compares the recorded results bit for bit.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .geometry import MeshSDF, TriangleMesh, icosphere
from .io import (
    FormatError, load_checkpoint, load_depth, load_mesh, load_samples, save_checkpoint, save_depth, save_losses,
    save_mesh, save_samples, write_csv,
)
from .mlp import ConfigError, ContractError
from .training import NumericalError

log = logging.getLogger("deepls")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
# 7 mm in metres: the default completion threshold
COMPLETION_THRESHOLD_M = 0.007
OUTPUT_ARGS = ("output", "out_dir", "volume_out")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    parse.__name__ = f"positive {kind.__name__}"
    return parse


pos_int = _positive(int)
pos_float = _positive(float)


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


# -- manifests -------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def manifest_path_for(args) -> Path:
    if args.command == "replay":
        # the replayed run owns manifest.json in the same directory
        return Path(args.out_dir) / "replay.manifest.json"
    if getattr(args, "out_dir", None):
        return Path(args.out_dir) / "manifest.json"
    return Path(str(args.output) + ".manifest.json")


def write_manifest(args, inputs, outputs, results, timings) -> Path:
    config = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "tool": "deepls",
        "version": __version__,
        "subcommand": args.command,
        "args": config,
        "seed": args.seed,
        "threads": args.threads,
        "inputs": [_abs(p) for p in inputs],
        "outputs": [_abs(p) for p in outputs],
        "results": {k: _jsonable(v) for k, v in results.items()},
        "timings_s": timings,
    }
    path = manifest_path_for(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2))
    return path


class Timer:
    def __init__(self):
        self.laps = {}

    def lap(self, name):
        timer = self

        class _Lap:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.laps[name] = timer.laps.get(name, 0.0) + time.perf_counter() - self.t0

        return _Lap()


def _out_path(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sidecar(output, suffix: str) -> Path:
    output = Path(output)
    return output.with_name(output.stem + suffix)


# -- shared loaders ----------------------------------------------------------------


def _load_frames(paths):
    return [load_depth(p) for p in paths]


def _observation_points(paths) -> np.ndarray:
    pts = []
    for p in paths:
        if str(p).endswith(".csv"):
            s = load_samples(p)
            pts.append(s.positions[s.sdf == 0])
        else:
            f = load_depth(p)
            pts.append(f.backproject()[f.valid_mask()])
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def _gather_samples(args, timer):
    """Samples from --samples, --mesh or --depth (exactly one)."""
    from .experiments import scan_samples
    from .sampling import sample_mesh

    given = [x for x in (args.samples, args.mesh, args.depth) if x]
    if len(given) != 1:
        raise UsageError("give exactly one of --samples, --mesh, --depth")
    with timer.lap("sampling"):
        if args.samples:
            return load_samples(args.samples), [args.samples]
        if args.mesh:
            mesh = load_mesh(args.mesh)
            return sample_mesh(mesh, args.n_surface, args.n_uniform, args.seed), [args.mesh]
        frames = _load_frames(args.depth)
        return scan_samples(frames, args.voxel_size), list(args.depth)


# -- commands ----------------------------------------------------------------------


def cmd_train_prior(args, timer):
    from .grid import LatentGrid
    from .training import SamplerConfig, TrainConfig, build_patch_dataset, primitive_scenes, train_prior

    if args.steps is not None and args.epochs is not None:
        raise UsageError("--steps and --epochs are mutually exclusive")
    steps = args.steps if args.steps is not None or args.epochs is not None else 15000
    with timer.lap("dataset"):
        scenes = primitive_scenes(args.primitives, args.seed)
        template = LatentGrid(args.voxel_size, args.code_dim, receptive_radius_factor=args.receptive_factor)
        sampler = SamplerConfig(
            samples_per_shape=args.samples_per_shape, uniform_per_shape=args.uniform_per_shape,
            max_voxels_per_shape=args.max_voxels_per_shape,
        )
        dataset = build_patch_dataset(scenes, template, sampler, seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs or 1, steps=steps, batch_voxels=args.batch_voxels,
        samples_per_voxel_per_step=args.samples_per_voxel, lr=args.lr, seed=args.seed,
        hidden_dim=args.hidden_dim, code_dim=args.code_dim, log_every=args.log_every,
    )
    with timer.lap("train"):
        result = train_prior(dataset, config)
    out = _out_path(args.output)
    losses_csv = _sidecar(out, ".losses.csv")
    losses_png = _sidecar(out, ".losses.png")
    with timer.lap("write"):
        save_checkpoint(out, result.decoder, result.optimizer)
        save_losses(losses_csv, result.step_losses, result.step_lrs)
        from .plotting import plot_losses

        plot_losses(result.step_losses, losses_png)
    final = float(np.mean(result.step_losses[-100:]))
    print(f"trained {len(result.step_losses)} steps on {dataset.n_voxels} voxels; final loss {final:.5f}")
    return [], [out, losses_csv, losses_png], {"final_loss": final, "voxels": dataset.n_voxels}


def cmd_make_mesh(args, timer):
    from .experiments import blob_mesh

    with timer.lap("mesh"):
        if args.kind == "icosphere":
            mesh = icosphere(args.subdivisions, args.radius)
        else:
            mesh = blob_mesh(args.resolution)
    out = _out_path(args.output)
    save_mesh(mesh, out)
    print(f"wrote {len(mesh)} triangles to {out}")
    return [], [out], {"triangles": len(mesh), "vertices": len(mesh.vertices)}


def cmd_scan(args, timer):
    from .experiments import ScanSetup, render_scans, sphere_scene

    setup = ScanSetup(args.radius, args.views, args.image_size, args.fov, args.distance, args.elevation)
    with timer.lap("render"):
        if args.mesh:
            scene = load_mesh(args.mesh)
        else:
            scene = sphere_scene(setup)
        frames = render_scans(scene, setup, args.noise, args.seed, args.subset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, frame in enumerate(frames):
        path = out_dir / f"view_{i:03d}.dlsd"
        save_depth(frame, path)
        outputs.append(path)
    valid = int(sum(f.valid_mask().sum() for f in frames))
    print(f"wrote {len(frames)} frames ({valid} valid pixels) to {out_dir}")
    return [args.mesh] if args.mesh else [], outputs, {"frames": len(frames), "valid_pixels": valid}


def cmd_sample(args, timer):
    samples, inputs = _gather_samples(args, timer)
    out = _out_path(args.output)
    save_samples(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return inputs, [out], {"samples": len(samples)}


def cmd_encode(args, timer):
    from .grid import LatentGrid
    from .inference import EncodeConfig, encode_scene

    ckpt = load_checkpoint(args.checkpoint)
    samples, inputs = _gather_samples(args, timer)
    if len(samples) == 0:
        raise FormatError("no samples to encode")
    if args.init_grid:
        init = load_checkpoint(args.init_grid).grid
        if init is None:
            raise FormatError(f"{args.init_grid}: checkpoint holds no grid")
        if init.code_dim != ckpt.decoder.code_dim:
            raise ContractError(f"grid code_dim {init.code_dim} != checkpoint code_dim {ckpt.decoder.code_dim}")
        grid = LatentGrid(init.voxel_size, init.code_dim, init.origin, args.receptive_factor, seed=args.seed)
        grid.set_entries(init.indices, init.codes)
        inputs.append(args.init_grid)
    else:
        grid = LatentGrid(args.voxel_size, ckpt.decoder.code_dim, receptive_radius_factor=args.receptive_factor, seed=args.seed)
        grid.allocate(samples.near_surface(args.allocation_band * args.voxel_size))
    if len(grid) == 0:
        raise FormatError("no voxel was allocated (no samples near the surface)")
    config = EncodeConfig(
        iterations=args.iterations, lr=args.lr, samples_per_voxel=args.samples_per_voxel, seed=args.seed,
    )
    with timer.lap("encode"):
        res = encode_scene(ckpt.decoder, grid, samples, config)
    out = _out_path(args.output)
    save_checkpoint(out, ckpt.decoder, grid=res.grid)
    stats = {
        "voxels": len(res.grid),
        "empty_voxels": int(res.empty.sum()),
        "loss_mean": float(res.losses.mean()),
        "loss_median": float(np.median(res.losses)),
        "loss_max": float(res.losses.max()),
    }
    print(
        f"encoded {stats['voxels']} voxels ({stats['empty_voxels']} without samples) in "
        f"{timer.laps['encode']:.1f}s; loss mean {stats['loss_mean']:.5f} "
        f"median {stats['loss_median']:.5f} max {stats['loss_max']:.5f}"
    )
    return [args.checkpoint] + inputs, [out], stats


def _tsdf_from_npz(path):
    from .fusion import TsdfVolume

    with np.load(path) as data:
        try:
            vol = TsdfVolume(data["origin"], float(data["voxel_size"]), data["tsdf"].shape, float(data["truncation"]))
            vol.tsdf = data["tsdf"].astype(np.float64)
            vol.weight = data["weight"].astype(np.float64)
        except KeyError as exc:
            raise FormatError(f"{path}: missing array {exc}") from None
    return vol


def _extract_and_save(source, region, args, observations, timer):
    from .meshing import ExtractionConfig, LatticeStats, extract

    stats = LatticeStats()
    config = ExtractionConfig(args.resolution, args.mask_radius)
    with timer.lap("extract"):
        mesh = extract(source, region, config, observations, stats)
    out = _out_path(args.output)
    save_mesh(mesh, out)
    if len(mesh) == 0:
        log.warning("extracted mesh is empty")
        print("warning: extracted mesh is empty", file=sys.stderr)
    print(f"wrote {len(mesh)} triangles to {out}")
    results = {
        "vertices": len(mesh.vertices), "triangles": len(mesh),
        "cells": stats.cells, "masked_cells": stats.masked_cells, "unavailable_cells": stats.unavailable_cells,
    }
    return out, results


def cmd_reconstruct(args, timer):
    from .meshing import grid_region, grid_source

    if bool(args.grid) == bool(args.tsdf):
        raise UsageError("give exactly one of --grid, --tsdf")
    if np.isfinite(args.mask_radius) and not args.observations:
        raise UsageError("--mask-radius needs --observations")
    inputs = [args.grid or args.tsdf] + list(args.observations or [])
    if args.grid:
        ckpt = load_checkpoint(args.grid)
        if ckpt.grid is None:
            raise FormatError(f"{args.grid}: checkpoint holds no grid")
        decoder = ckpt.decoder
        if args.checkpoint:
            decoder = load_checkpoint(args.checkpoint).decoder
            inputs.append(args.checkpoint)
            if decoder.code_dim != ckpt.grid.code_dim:
                raise ContractError(f"grid code_dim {ckpt.grid.code_dim} != checkpoint code_dim {decoder.code_dim}")
        grid = ckpt.grid
        if len(grid) == 0:
            source = lambda p: np.full(len(p), np.nan)  # noqa: E731
            region = (np.zeros(3), np.ones(3) * grid.voxel_size)
        else:
            source = grid_source(decoder, grid)
            region = grid_region(grid)
        if args.resolution is None:
            args.resolution = grid.voxel_size / 8
    else:
        vol = _tsdf_from_npz(args.tsdf)
        source = lambda p: vol.query(p, args.min_weight)  # noqa: E731
        region = vol.bounds()
        if args.resolution is None:
            args.resolution = vol.voxel_size
    if args.region:
        region = (np.array(args.region[:3]), np.array(args.region[3:]))
    obs = _observation_points(args.observations) if args.observations else None
    out, results = _extract_and_save(source, region, args, obs, timer)
    return inputs, [out], results


def cmd_fuse(args, timer):
    from .experiments import min_depth
    from .fusion import fuse_frames

    frames = _load_frames(args.depth)
    pts = np.concatenate([f.backproject()[f.valid_mask()] for f in frames])
    if not len(pts):
        raise FormatError("no valid depth in any frame")
    trunc = args.truncation or 3.0 * args.voxel_size
    if args.bounds:
        lo, hi = np.array(args.bounds[:3]), np.array(args.bounds[3:])
    else:
        lo, hi = pts.min(axis=0) - trunc - args.voxel_size, pts.max(axis=0) + trunc + args.voxel_size
    with timer.lap("fuse"):
        vol = fuse_frames(frames, lo, hi, args.voxel_size, trunc, z_ref=min_depth(frames))
    outputs = []
    if args.volume_out:
        vpath = _out_path(args.volume_out)
        with open(vpath, "wb") as fh:
            np.savez(fh, origin=vol.origin, voxel_size=vol.voxel_size, truncation=vol.truncation,
                     tsdf=vol.tsdf, weight=vol.weight)
        outputs.append(vpath)
    if args.resolution is None:
        args.resolution = args.voxel_size
    if np.isfinite(args.mask_radius):
        obs = pts
    else:
        obs = None
    source = lambda p: vol.query(p, args.min_weight)  # noqa: E731
    out, results = _extract_and_save(source, vol.bounds(), args, obs, timer)
    results["volume_dims"] = list(vol.dims)
    return list(args.depth), [out] + outputs, results


def cmd_eval(args, timer):
    from .metrics import chamfer, completion, mesh_accuracy

    pred = load_mesh(args.pred)
    gt = load_mesh(args.gt)
    if len(gt) == 0:
        raise FormatError(f"{args.gt}: ground-truth mesh is empty")
    # equal seeds per mesh: identical meshes yield identical point sets
    with timer.lap("sample"):
        gt_pts, _ = gt.sample_surface(args.n_points, np.random.default_rng(args.seed))
        pred_pts = (pred.sample_surface(args.n_points, np.random.default_rng(args.seed))[0]
                    if len(pred) else np.zeros((0, 3)))
    row = {"n_pred": len(pred_pts), "n_gt": len(gt_pts), "completion_threshold": args.threshold}
    failed = len(pred_pts) == 0
    with timer.lap("metrics"):
        row["completion"] = completion(gt_pts, pred_pts, args.threshold)
        if failed:
            row["chamfer"] = float("nan")
            row["chamfer_x1e3"] = float("nan")
            row["mesh_accuracy_p90"] = float("nan")
        else:
            row["chamfer"] = chamfer(pred_pts, gt_pts)
            row["chamfer_x1e3"] = row["chamfer"] * 1e3
            row["mesh_accuracy_p90"] = mesh_accuracy(pred_pts, gt_pts)
        row["status"] = "failed: empty prediction" if failed else "ok"
    out = _out_path(args.output)
    write_csv(out, [row])
    figure = _sidecar(out, ".png")
    if not failed:
        from .metrics import nearest_sq_distances
        from .plotting import plot_eval_distances

        plot_eval_distances(np.sqrt(nearest_sq_distances(pred_pts, gt_pts)),
                            np.sqrt(nearest_sq_distances(gt_pts, pred_pts)), args.threshold, figure)
    for k, v in row.items():
        print(f"{k}: {v}")
    if failed:
        print("error: prediction mesh is empty; chamfer undefined", file=sys.stderr)
    return [args.pred, args.gt], [out] + ([figure] if not failed else []), {k: v for k, v in row.items() if k != "status"} | {"failed": failed}


def cmd_demo2d(args, timer):
    from .demo2d import Demo2dConfig, is_monotone, run_sweep
    from .plotting import plot_demo2d_contours, plot_radius_curve

    config = Demo2dConfig(
        image_size=args.image_size, cell_size=args.cell_size, radii=tuple(args.radii),
        train_scenes=args.train_scenes, train_steps=args.steps, encode_iterations=args.encode_iterations,
        seed=args.seed,
    )
    with timer.lap("sweep"):
        results, scene, cells = run_sweep(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"radius": r.radius, "test_error_px": r.test_error_px, "train_loss": r.train_loss, "cells": r.cells}
            for r in results]
    csv_path = out_dir / "demo2d.csv"
    write_csv(csv_path, rows)
    curve = out_dir / "demo2d_error.png"
    contours = out_dir / "demo2d_contours.png"
    with timer.lap("plot"):
        plot_radius_curve([r.radius for r in results], [r.test_error_px for r in results], curve)
        plot_demo2d_contours(results, scene, cells, config.image_size, contours)
    for r in rows:
        print(f"radius {r['radius']:g}: test error {r['test_error_px']:.4f} px")
    errors = [r.test_error_px for r in results]
    monotone = is_monotone(errors)
    print("critical point: " + ("not observed (monotone)" if monotone else "observed (non-monotone)"))
    res = {f"error_r{r.radius:g}": r.test_error_px for r in results}
    res["non_monotone"] = not monotone
    return [], [csv_path, curve, contours], res


def cmd_generalize(args, timer):
    """Encode the held-out blob with a prior and report near-surface SDF error."""
    from .experiments import blob_mesh, face_disagreement
    from .grid import LatentGrid
    from .inference import EncodeConfig, encode_scene, query_sdf_batch
    from .metrics import sdf_rmse_relative
    from .sampling import sample_mesh

    ckpt = load_checkpoint(args.checkpoint)
    V = args.voxel_size
    with timer.lap("scene"):
        mesh = blob_mesh(args.blob_resolution)
        gt = MeshSDF(mesh)
        diag = mesh.bbox_diagonal()
        samples = sample_mesh(mesh, args.n_surface, args.n_uniform, args.seed, sigmas=tuple(args.sigmas), sdf_fn=gt)
    grid = LatentGrid(V, ckpt.decoder.code_dim, receptive_radius_factor=args.receptive_factor, seed=args.seed)
    grid.allocate(samples.near_surface(args.allocation_band * V))
    with timer.lap("encode"):
        res = encode_scene(ckpt.decoder, grid, samples, EncodeConfig(iterations=args.iterations, seed=args.seed))
    with timer.lap("evaluate"):
        rng = np.random.default_rng([args.seed, 7])
        pts, normals = mesh.sample_surface(args.probes, rng)
        probes = pts + normals * rng.uniform(-args.probe_band * V, args.probe_band * V, (args.probes, 1))
        rmse_rel = sdf_rmse_relative(lambda p: query_sdf_batch(ckpt.decoder, res.grid, p), gt, probes, diag)
        disagreement = face_disagreement(ckpt.decoder, res.grid, seed=args.seed, gt_sdf=gt, band=V)
    truncation = ckpt.decoder.truncation / ckpt.decoder.voxel_size * V
    results = {
        "voxels": len(res.grid),
        "bbox_diagonal": diag,
        "sdf_rmse_relative": rmse_rel,
        "face_disagreement_median": float(np.median(disagreement)),
        "face_disagreement_median_over_truncation": float(np.median(disagreement)) / truncation,
        "face_points": len(disagreement),
        "encode_seconds": timer.laps["encode"],
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / "grid.dls"
    save_checkpoint(grid_path, ckpt.decoder, grid=res.grid)
    csv_path = out_dir / "generalize.csv"
    write_csv(csv_path, [results])
    print(f"near-surface SDF RMSE {100 * rmse_rel:.4f}% of the diagonal over {len(res.grid)} voxels")
    print(f"median shared-face disagreement {results['face_disagreement_median_over_truncation']:.4f} x truncation")
    results.pop("encode_seconds")
    return [args.checkpoint], [grid_path, csv_path], results


def cmd_mask_sweep(args, timer):
    from .experiments import mask_sweep
    from .meshing import grid_region, grid_source
    from .plotting import plot_mask_sweep

    ckpt = load_checkpoint(args.grid)
    if ckpt.grid is None or len(ckpt.grid) == 0:
        raise FormatError(f"{args.grid}: no encoded voxels")
    gt = load_mesh(args.gt)
    gt_pts, _ = gt.sample_surface(args.n_points, np.random.default_rng(args.seed))
    obs = _observation_points(args.observations)
    resolution = args.resolution or ckpt.grid.voxel_size / 5
    with timer.lap("sweep"):
        rows = mask_sweep(grid_source(ckpt.decoder, ckpt.grid), grid_region(ckpt.grid), resolution, obs,
                          args.radii, gt_pts, args.threshold)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "mask_sweep.csv"
    png = out_dir / "mask_sweep.png"
    write_csv(csv_path, rows)
    plot_mask_sweep(rows, png)
    for r in rows:
        print(f"mask radius {r['mask_radius']:g}: completion {r['completion']:.4f}, masked cells {r['masked_cells']}")
    res = {f"completion_{i}": r["completion"] for i, r in enumerate(rows)}
    return [args.grid, args.gt] + list(args.observations), [csv_path, png], res


def _bits_equal(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        try:
            return float(a).hex() == float(b).hex()
        except (TypeError, ValueError):
            return False
    return a == b


def cmd_replay(args, timer):
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest.get("subcommand")
    if command not in COMMANDS or command == "replay":
        raise FormatError(f"{args.manifest}: cannot replay subcommand {command!r}")
    recorded = argparse.Namespace(**manifest["args"])
    out_dir = Path(args.out_dir)
    for key in OUTPUT_ARGS:
        value = getattr(recorded, key, None)
        if value is not None:
            setattr(recorded, key, str(out_dir if key == "out_dir" else out_dir / Path(value).name))
    recorded.threads = args.threads
    inner = Timer()
    with threadpool_limits(recorded.threads):
        _, outputs, results = COMMANDS[command](recorded, inner)
    write_manifest(recorded, [], outputs, results, inner.laps)
    mismatched = []
    for key, value in manifest["results"].items():
        same = _bits_equal(value, _jsonable(results.get(key)))
        print(f"{key}: recorded {value!r} replayed {results.get(key)!r} -> {'identical' if same else 'DIFFERENT'}")
        if not same:
            mismatched.append(key)
    if mismatched:
        raise NumericalError(f"replay differs in {', '.join(mismatched)}")
    return [args.manifest], outputs, {"replayed": command, "identical": True}


COMMANDS = {
    "train-prior": cmd_train_prior,
    "make-mesh": cmd_make_mesh,
    "scan": cmd_scan,
    "sample": cmd_sample,
    "encode": cmd_encode,
    "reconstruct": cmd_reconstruct,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "demo2d": cmd_demo2d,
    "generalize": cmd_generalize,
    "mask-sweep": cmd_mask_sweep,
    "replay": cmd_replay,
}


def _add_sample_inputs(p, voxel_required: bool = True):
    p.add_argument("--samples", help="samples CSV (x,y,z,sdf,weight)")
    p.add_argument("--mesh", help="mesh to sample (OBJ or PLY)")
    p.add_argument("--depth", nargs="+", help="depth frames (.dlsd)")
    p.add_argument("--voxel-size", type=pos_float, required=voxel_required)
    p.add_argument("--n-surface", type=pos_int, default=150000, help="near-surface samples for --mesh")
    p.add_argument("--n-uniform", type=int, default=10000, help="bounding-box samples for --mesh")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=pos_int, default=1, help="BLAS threads; 1 is bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="deepls", description="Local SDF autodecoder tools")
    parser.add_argument("--version", action="version", version=f"deepls {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-prior", parents=[common], help="train a decoder on random primitives")
    p.add_argument("--primitives", type=pos_int, default=200)
    p.add_argument("--steps", type=pos_int)
    p.add_argument("--epochs", type=pos_int)
    p.add_argument("--voxel-size", type=pos_float, default=1.0)
    p.add_argument("--receptive-factor", type=pos_float, default=1.5)
    p.add_argument("--batch-voxels", type=pos_int, default=64)
    p.add_argument("--samples-per-voxel", type=pos_int, default=64)
    p.add_argument("--samples-per-shape", type=pos_int, default=6000)
    p.add_argument("--uniform-per-shape", type=int, default=1000)
    p.add_argument("--max-voxels-per-shape", type=pos_int, default=24)
    p.add_argument("--lr", type=pos_float, default=0.01)
    p.add_argument("--code-dim", type=pos_int, default=125)
    p.add_argument("--hidden-dim", type=pos_int, default=128)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")

    p = sub.add_parser("make-mesh", parents=[common], help="write a test mesh")
    p.add_argument("--kind", choices=("icosphere", "blob"), default="icosphere")
    p.add_argument("--subdivisions", type=int, default=3)
    p.add_argument("--radius", type=pos_float, default=1.0)
    p.add_argument("--resolution", type=pos_float, default=0.02, help="lattice spacing for the blob")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("scan", parents=[common], help="render synthetic depth frames")
    p.add_argument("--mesh", help="scan this mesh instead of the analytic sphere")
    p.add_argument("--radius", type=pos_float, default=1.0)
    p.add_argument("--views", type=pos_int, default=8)
    p.add_argument("--subset", type=int, nargs="+", help="indices of orbit views to keep")
    p.add_argument("--image-size", type=pos_int, default=96)
    p.add_argument("--fov", type=pos_float, default=50.0)
    p.add_argument("--distance", type=pos_float, default=3.0)
    p.add_argument("--elevation", type=float, default=30.0)
    p.add_argument("--noise", type=_nonneg_float, default=0.0, help="depth noise sigma (scene units)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sample", parents=[common], help="write SDF samples to CSV")
    _add_sample_inputs(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("encode", parents=[common], help="encode samples into a latent grid")
    p.add_argument("--checkpoint", required=True)
    _add_sample_inputs(p)
    p.add_argument("--init-grid", help="start from the voxels and codes of this grid file")
    p.add_argument("--receptive-factor", type=pos_float, default=1.5)
    p.add_argument("--allocation-band", type=pos_float, default=0.5, help="in voxels")
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--samples-per-voxel", type=pos_int, default=64)
    p.add_argument("--lr", type=pos_float, default=0.01)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("reconstruct", parents=[common], help="mesh an encoded grid or TSDF volume")
    p.add_argument("--grid", help="encoded grid file")
    p.add_argument("--tsdf", help="TSDF volume (.npz from fuse --volume-out)")
    p.add_argument("--checkpoint", help="decoder to use instead of the one stored with the grid")
    p.add_argument("--resolution", type=pos_float)
    p.add_argument("--mask-radius", type=pos_float, default=float("inf"))
    p.add_argument("--observations", nargs="+", help="depth frames or samples CSV for the mask")
    p.add_argument("--region", type=float, nargs=6, metavar=("XLO", "YLO", "ZLO", "XHI", "YHI", "ZHI"))
    p.add_argument("--min-weight", type=_nonneg_float, default=0.0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("fuse", parents=[common], help="TSDF-fuse depth frames and mesh the result")
    p.add_argument("--depth", nargs="+", required=True)
    p.add_argument("--voxel-size", type=pos_float, required=True)
    p.add_argument("--truncation", type=pos_float)
    p.add_argument("--bounds", type=float, nargs=6)
    p.add_argument("--resolution", type=pos_float)
    p.add_argument("--mask-radius", type=pos_float, default=float("inf"))
    p.add_argument("--min-weight", type=_nonneg_float, default=0.0)
    p.add_argument("--volume-out")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("eval", parents=[common], help="compare a predicted mesh with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--n-points", type=pos_int, default=30000)
    p.add_argument("--threshold", type=pos_float, default=COMPLETION_THRESHOLD_M)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("demo2d", parents=[common], help="2D receptive-field sweep")
    p.add_argument("--radii", type=pos_float, nargs="+", default=[1.0, 1.25, 1.5, 1.75, 2.0])
    p.add_argument("--image-size", type=pos_int, default=64)
    p.add_argument("--cell-size", type=pos_float, default=8.0)
    p.add_argument("--train-scenes", type=pos_int, default=8)
    p.add_argument("--steps", type=pos_int, default=1500)
    p.add_argument("--encode-iterations", type=pos_int, default=300)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("generalize", parents=[common], help="encode the held-out blob and score it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--voxel-size", type=pos_float, default=0.1)
    p.add_argument("--receptive-factor", type=pos_float, default=1.5)
    p.add_argument("--blob-resolution", type=pos_float, default=0.02)
    p.add_argument("--n-surface", type=pos_int, default=150000)
    p.add_argument("--n-uniform", type=int, default=10000)
    p.add_argument("--sigmas", type=pos_float, nargs=2, default=[0.01, 0.002],
                   help="surface perturbation scales as fractions of the bounding-box diagonal")
    p.add_argument("--allocation-band", type=pos_float, default=0.5)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--probes", type=pos_int, default=20000)
    p.add_argument("--probe-band", type=pos_float, default=0.5, help="probe offsets in voxels")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("mask-sweep", parents=[common], help="completion versus extraction mask radius")
    p.add_argument("--grid", required=True)
    p.add_argument("--gt", required=True, help="ground-truth mesh")
    p.add_argument("--observations", nargs="+", required=True)
    p.add_argument("--radii", type=pos_float, nargs="+", default=[0.02, 0.04, 0.08, 0.16, 0.32, float("inf")])
    p.add_argument("--resolution", type=pos_float)
    p.add_argument("--threshold", type=pos_float, default=COMPLETION_THRESHOLD_M)
    p.add_argument("--n-points", type=pos_int, default=20000)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare results")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    timer = Timer()
    try:
        with threadpool_limits(args.threads):
            inputs, outputs, results = COMMANDS[args.command](args, timer)
        write_manifest(args, inputs, outputs, results, timer.laps)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, ContractError, ConfigError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.command == "eval" and results.get("failed"):
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
