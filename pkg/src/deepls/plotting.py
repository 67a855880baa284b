"""Figures written next to CSV reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_losses(losses, path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(losses)), losses, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    _save(fig, path)


def plot_radius_curve(radii, errors, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(radii, errors, "o-")
    ax.set_xlabel("receptive radius (cells)")
    ax.set_ylabel("test SDF error (px)")
    _save(fig, path)


def plot_demo2d_contours(results, shapes, cells, image_size: int, path, resolution: int = 256) -> None:
    """Predicted SDF per radius with true (black) and predicted (red) zero contours."""
    from .demo2d import predict, scene_sdf2d

    xs = (np.arange(resolution) + 0.5) * image_size / resolution
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    gt = scene_sdf2d(shapes, pts).reshape(resolution, resolution)
    fig, axes = plt.subplots(1, len(results), figsize=(3.0 * len(results), 3.2), squeeze=False)
    for ax, res in zip(axes[0], results):
        pred = predict(res.decoder, cells, res.codes, pts).reshape(resolution, resolution)
        lim = res.decoder.truncation
        ax.imshow(pred, origin="lower", extent=(0, image_size, 0, image_size), cmap="coolwarm", vmin=-lim, vmax=lim)
        ax.contour(gx, gy, gt, levels=[0.0], colors="k", linewidths=0.8)
        if np.isfinite(pred).any():
            ax.contour(gx, gy, np.nan_to_num(pred, nan=lim), levels=[0.0], colors="r", linewidths=0.8)
        for c in np.arange(0, image_size + 1e-9, cells.cell_size):
            ax.axhline(c, color="0.85", lw=0.3)
            ax.axvline(c, color="0.85", lw=0.3)
        ax.set_title(f"R={res.radius:g}  err={res.test_error_px:.3f}px", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    _save(fig, path)


def plot_mask_sweep(rows, path) -> None:
    radii = np.array([r["mask_radius"] for r in rows], dtype=np.float64)
    finite = np.isfinite(radii)
    shown = np.where(finite, radii, (radii[finite].max() * 2) if finite.any() else 1.0)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(shown, [r["completion"] for r in rows], "o-", color="C0")
    ax.set_xscale("log")
    ax.set_xlabel("mask radius")
    ax.set_ylabel("completion", color="C0")
    ax2 = ax.twinx()
    ax2.plot(shown, [r["masked_cells"] for r in rows], "s--", color="C1")
    ax2.set_ylabel("masked cells", color="C1")
    _save(fig, path)


def plot_eval_distances(pred_to_gt, gt_to_pred, threshold: float, path) -> None:
    """Histograms of nearest distances in both directions, with the completion threshold."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    top = max(float(np.percentile(pred_to_gt, 99)), float(np.percentile(gt_to_pred, 99)), 2 * threshold)
    bins = np.linspace(0.0, top, 50)
    ax.hist(pred_to_gt, bins=bins, alpha=0.6, label="pred to gt")
    ax.hist(gt_to_pred, bins=bins, alpha=0.6, label="gt to pred")
    ax.axvline(threshold, color="k", ls="--", lw=0.8, label="completion threshold")
    ax.set_xlabel("nearest distance")
    ax.set_ylabel("points")
    ax.legend(fontsize=7)
    _save(fig, path)
