import numpy as np

from deepls.plotting import plot_eval_distances, plot_losses, plot_mask_sweep, plot_radius_curve


def test_figures_written(tmp_path):
    rng = np.random.default_rng(0)
    plot_losses(np.exp(-np.linspace(0, 3, 50)), tmp_path / "l.png")
    plot_radius_curve([1.0, 1.5, 2.0], [0.3, 0.2, 0.25], tmp_path / "r.png")
    plot_mask_sweep([{"mask_radius": 0.1, "completion": 0.4, "masked_cells": 10},
                     {"mask_radius": float("inf"), "completion": 0.9, "masked_cells": 0}], tmp_path / "m.png")
    plot_eval_distances(rng.random(100) * 0.01, rng.random(100) * 0.01, 0.005, tmp_path / "e.png")
    for name in "lrme":
        assert (tmp_path / f"{name}.png").read_bytes()[:4] == b"\x89PNG"
