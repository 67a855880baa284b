"""End-to-end acceptance checks, one test per criterion.

Priors are trained through the CLI. Set DEEPLS_ACCEPTANCE_CACHE to a directory
to keep trained checkpoints (and their manifests) between sessions.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from deepls.cli import main
from deepls.experiments import (
    ScanSetup, deepls_from_samples, fusion_from_scans, mask_sweep, render_scans, rmse_where_both, scan_points,
    scan_samples, shell_probes, sphere_scene, sphere_surface_points,
)
from deepls.geometry import icosphere
from deepls.inference import EncodeConfig
from deepls.io import load_checkpoint
from deepls.meshing import ExtractionConfig, extract, grid_region, grid_source
from deepls.metrics import chamfer, completion, mesh_accuracy

from gradcheck import check_problem

pytestmark = pytest.mark.acceptance

PRIOR_SEED = 1
DEEPLS_VOXEL = 0.2
FUSION_VOXEL = 0.04
SPHERE_BOX = ([-1.3] * 3, [1.3] * 3)


def record(report, number, passed, detail):
    report[number] = (bool(passed), detail)


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    cache = os.environ.get("DEEPLS_ACCEPTANCE_CACHE")
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
        return Path(cache)
    return tmp_path_factory.mktemp("acceptance")


def _prior(work_dir, factor):
    path = work_dir / f"prior_f{factor:g}.dls"
    manifest = Path(f"{path}.manifest.json")
    if not manifest.exists():
        rc = main(["train-prior", "--seed", str(PRIOR_SEED), "--receptive-factor", str(factor), "-o", str(path)])
        assert rc == 0
    return path, json.loads(manifest.read_text())


@pytest.fixture(scope="session")
def prior15(work_dir):
    return _prior(work_dir, 1.5)


@pytest.fixture(scope="session")
def prior10(work_dir):
    return _prior(work_dir, 1.0)


def _generalize(work_dir, ckpt, factor):
    out = work_dir / f"generalize_f{factor:g}"
    manifest = out / "manifest.json"
    if not manifest.exists():
        rc = main(["generalize", "--checkpoint", str(ckpt), "--receptive-factor", str(factor), "--out-dir", str(out)])
        assert rc == 0
    return json.loads(manifest.read_text())


@pytest.fixture(scope="session")
def generalize15(work_dir, prior15):
    return _generalize(work_dir, prior15[0], 1.5)


@pytest.fixture(scope="session")
def sphere_decoder(prior15):
    return load_checkpoint(prior15[0]).decoder


def test_criterion_01_gradient_oracle(acceptance_report):
    start = time.perf_counter()
    worst = 0.0
    compared = screened = 0
    for seed in range(100):
        w, c, s = check_problem(seed)
        worst, compared, screened = max(worst, w), compared + c, screened + s
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60.0
    record(acceptance_report, 1, ok,
           f"worst rel err {worst:.2e} over {compared} components ({screened} at kinks), {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 60.0


def test_criterion_02_generalization(acceptance_report, prior15, generalize15):
    _, train_manifest = prior15
    train_s = train_manifest["timings_s"]["train"]
    encode_s = generalize15["timings_s"]["encode"]
    res = generalize15["results"]
    rmse = res["sdf_rmse_relative"]
    # roughly 20 voxels across each axis of the bounding box
    side = res["bbox_diagonal"] / np.sqrt(3) / generalize15["args"]["voxel_size"]
    ok = rmse <= 0.005 and train_s <= 1800 and encode_s <= 600
    record(acceptance_report, 2, ok,
           f"RMSE {100 * rmse:.4f}% of diagonal, {res['voxels']} voxels (box ~{side:.0f} voxels/side), "
           f"train {train_s:.0f}s, encode {encode_s:.0f}s")
    assert 15 <= side <= 25
    assert rmse <= 0.005
    assert train_s <= 1800
    assert encode_s <= 600


def test_criterion_03_border_consistency(acceptance_report, work_dir, generalize15, prior10):
    wide = generalize15["results"]["face_disagreement_median_over_truncation"]
    narrow = _generalize(work_dir, prior10[0], 1.0)["results"]["face_disagreement_median_over_truncation"]
    ok = wide < 0.1 and narrow > wide
    record(acceptance_report, 3, ok, f"median disagreement / truncation: factor 1.5 {wide:.4f}, factor 1.0 {narrow:.4f}")
    assert wide < 0.1
    assert narrow > wide


def test_criterion_04_demo2d(acceptance_report, work_dir):
    out = work_dir / "demo2d"
    start = time.perf_counter()
    assert main(["demo2d", "--out-dir", str(out)]) == 0
    elapsed = time.perf_counter() - start
    res = json.loads((out / "manifest.json").read_text())["results"]
    e10, e15 = res["error_r1"], res["error_r1.5"]
    ok = e15 < e10 and elapsed <= 300
    record(acceptance_report, 4, ok,
           f"error r1.0 {e10:.4f}px, r1.5 {e15:.4f}px, non-monotone {res['non_monotone']}, {elapsed:.0f}s")
    assert e15 < e10
    assert elapsed <= 300


@pytest.fixture(scope="session")
def clean_sphere_scan():
    setup = ScanSetup()
    shapes = sphere_scene(setup)
    return shapes, render_scans(shapes, setup)


def test_criterion_05_fusion_parity(acceptance_report, sphere_decoder, clean_sphere_scan):
    shapes, frames = clean_sphere_scan
    assert len(frames) == 8
    gt = sphere_surface_points(shapes[0], 30000, 1)
    vol = fusion_from_scans(frames, *SPHERE_BOX, FUSION_VOXEL)
    fused = extract(lambda p: vol.query(p), SPHERE_BOX, ExtractionConfig(FUSION_VOXEL))
    rng = np.random.default_rng(2)
    c_fusion = chamfer(fused.sample_surface(30000, rng)[0], gt)
    res = deepls_from_samples(sphere_decoder, scan_samples(frames, DEEPLS_VOXEL), DEEPLS_VOXEL,
                              EncodeConfig(iterations=200))
    dls = extract(grid_source(sphere_decoder, res.grid), grid_region(res.grid), ExtractionConfig(FUSION_VOXEL))
    c_deepls = chamfer(dls.sample_surface(30000, rng)[0], gt)
    # squared Chamfer is compared with the squared voxel size
    ok = c_fusion < FUSION_VOXEL ** 2 and c_deepls <= 1.5 * c_fusion
    record(acceptance_report, 5, ok,
           f"chamfer fusion {c_fusion:.3e} (bound {FUSION_VOXEL ** 2:.1e}), DeepLS {c_deepls:.3e} "
           f"(ratio {c_deepls / c_fusion:.2f})")
    assert c_fusion < FUSION_VOXEL ** 2
    assert c_deepls <= 1.5 * c_fusion


def test_criterion_06_noise_robustness(acceptance_report, sphere_decoder):
    setup = ScanSetup()
    shapes = sphere_scene(setup)
    probes = shell_probes(shapes, 20000, 0.05, 3)
    wins, lines = 0, []
    for seed in range(3):
        frames = render_scans(shapes, setup, noise=0.015 * setup.radius, seed=seed)
        vol = fusion_from_scans(frames, *SPHERE_BOX, FUSION_VOXEL)
        res = deepls_from_samples(sphere_decoder, scan_samples(frames, DEEPLS_VOXEL), DEEPLS_VOXEL,
                                  EncodeConfig(iterations=200))
        near = (np.abs(vol.tsdf) < 1.0) & (vol.weight > 0)
        (r_fusion, r_deepls), _ = rmse_where_both(shapes, probes, lambda p: vol.query(p),
                                                  grid_source(sphere_decoder, res.grid))
        wins += r_deepls < r_fusion
        lines.append(f"seed {seed}: DeepLS {r_deepls:.4f} vs fusion {r_fusion:.4f} "
                     f"({len(res.grid) * sphere_decoder.code_dim} vs {int(near.sum())} params)")
    ok = wins >= 2
    record(acceptance_report, 6, ok, f"DeepLS better in {wins}/3; " + "; ".join(lines))
    assert wins >= 2


def test_criterion_07_mask_sweep(acceptance_report, sphere_decoder):
    setup = ScanSetup()
    shapes = sphere_scene(setup)
    frames = render_scans(shapes, setup, views=[0, 1])
    res = deepls_from_samples(sphere_decoder, scan_samples(frames, DEEPLS_VOXEL), DEEPLS_VOXEL,
                              EncodeConfig(iterations=200))
    gt = sphere_surface_points(shapes[0], 20000, 1)
    radii = [0.02, 0.04, 0.06, 0.1, 0.2, np.inf]
    rows = mask_sweep(grid_source(sphere_decoder, res.grid), grid_region(res.grid), FUSION_VOXEL,
                      scan_points(frames), radii, gt, 0.125 * DEEPLS_VOXEL)
    comp = [r["completion"] for r in rows]
    masked = [r["masked_cells"] for r in rows]
    ok = all(np.diff(comp) >= 0) and all(np.diff(masked) <= 0)
    record(acceptance_report, 7, ok, "completion " + " ".join(f"{c:.3f}" for c in comp)
           + "; masked " + " ".join(str(m) for m in masked))
    assert all(np.diff(comp) >= 0)
    assert all(np.diff(masked) <= 0)
    assert comp[-1] > comp[0]


def _brute_nearest(a, b):
    d = a[:, None, :] - b[None, :, :]
    return np.min(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2], axis=1)


def test_criterion_08_metric_oracles(acceptance_report):
    rng = np.random.default_rng(8)
    failures = []
    for trial in range(5):
        a = rng.uniform(-1, 1, (500, 3))
        b = rng.uniform(-1, 1, (500, 3)) * rng.uniform(0.5, 2)
        da, db = _brute_nearest(a, b), _brute_nearest(b, a)
        ref_chamfer = float(da.mean() + db.mean())
        ref_acc = float(np.sort(np.sqrt(da))[int(np.ceil(0.9 * 500)) - 1])
        thr = float(np.median(np.sqrt(db)))
        ref_comp = float(np.count_nonzero(np.sqrt(db) <= thr) / 500)
        if chamfer(a, b) != ref_chamfer:
            failures.append(f"chamfer trial {trial}")
        if mesh_accuracy(a, b) != ref_acc:
            failures.append(f"accuracy trial {trial}")
        if completion(b, a, thr) != ref_comp:
            failures.append(f"completion trial {trial}")
    # straddling offsets around the 7 mm threshold: exactly at, just inside, just outside
    thr = 0.007
    gt = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [20.0, 0.0, 0.0], [30.0, 0.0, 0.0]])
    pred = gt + np.array([[thr, 0, 0], [0, np.nextafter(thr, 0), 0], [0, 0, np.nextafter(thr, 1)], [0, 0, 2 * thr]])
    exact = float(np.count_nonzero(np.sqrt(_brute_nearest(gt, pred)) <= thr) / 4)
    straddle = completion(gt, pred, thr)
    if straddle != exact:
        failures.append("straddle vs brute force")
    if completion(np.zeros((1, 3)), np.array([[thr, 0, 0]]), thr) != 1.0:
        failures.append("point at threshold not counted")
    if completion(np.zeros((1, 3)), np.array([[1.01 * thr, 0, 0]]), thr) != 0.0:
        failures.append("point past threshold counted")
    record(acceptance_report, 8, not failures, "exact on 5x500-point sets; straddle "
           f"{straddle:.2f}" + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_09_marching_cubes(acceptance_report):
    mesh = extract(lambda p: np.linalg.norm(p, axis=1) - 1.0, ([-1.3] * 3, [1.3] * 3), ExtractionConfig(0.05))
    err = float(np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)))
    chi = mesh.euler_characteristic()
    ok = err < 0.01 and chi == 2
    record(acceptance_report, 9, ok, f"max radial error {err:.2e}, Euler characteristic {chi}")
    assert err < 0.01
    assert chi == 2


def test_criterion_10_round_trip_and_replay(acceptance_report, work_dir, prior15, generalize15, tmp_path):
    from deepls.io import load_depth, load_mesh, save_checkpoint, save_depth, save_mesh

    ckpt = load_checkpoint(prior15[0])
    save_checkpoint(tmp_path / "c.dls", ckpt.decoder, ckpt.optimizer)
    again = load_checkpoint(tmp_path / "c.dls")
    same_ckpt = all(np.array_equal(x.weights, y.weights) and np.array_equal(x.biases, y.biases)
                    for x, y in zip(ckpt.decoder.mlp, again.decoder.mlp))
    same_ckpt &= (tmp_path / "c.dls").read_bytes() == Path(prior15[0]).read_bytes()
    mesh = icosphere(3)
    mesh.vertices = mesh.vertices * np.pi
    same_mesh = True
    for ext in ("obj", "ply"):
        save_mesh(mesh, tmp_path / f"m.{ext}")
        m2 = load_mesh(tmp_path / f"m.{ext}")
        same_mesh &= np.array_equal(m2.vertices, mesh.vertices) and np.array_equal(m2.triangles, mesh.triangles)
    frame = render_scans(sphere_scene(ScanSetup()), ScanSetup(image_size=32), noise=0.01)[0]
    save_depth(frame, tmp_path / "f.dlsd")
    f2 = load_depth(tmp_path / "f.dlsd")
    same_depth = np.array_equal(f2.depth, frame.depth) and np.array_equal(f2.pose, frame.pose)
    rc = main(["replay", str(work_dir / "generalize_f1.5" / "manifest.json"), "--threads", "1",
               "--out-dir", str(tmp_path / "replay")])
    replayed = json.loads((tmp_path / "replay" / "manifest.json").read_text())["results"]["sdf_rmse_relative"]
    recorded = generalize15["results"]["sdf_rmse_relative"]
    same_rmse = float(replayed).hex() == float(recorded).hex()
    ok = same_ckpt and same_mesh and same_depth and rc == 0 and same_rmse
    record(acceptance_report, 10, ok, f"checkpoint {same_ckpt}, mesh {same_mesh}, depth {same_depth}, "
           f"replay rc {rc}, RMSE {recorded!r} -> {replayed!r}")
    assert same_ckpt and same_mesh and same_depth
    assert rc == 0 and same_rmse
