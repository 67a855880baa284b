"""Finite-difference oracle for the full training objective.

Analytic gradients come from the 64-bit implementation. The reference central
differences use an independent straight-line re-implementation of the same
objective in extended precision, so that components around 1e-8 are not
swamped by float64 round-off (about eps * |loss| / h).

The objective is piecewise smooth (L1 residuals, leaky ReLU). A component whose
central difference straddles a kink is not comparable with the one-sided
analytic derivative, so such components are screened out by comparing the
activation and residual sign patterns at both probe points.
"""

import numpy as np

from deepls.decoder import make_decoder
from deepls.training import voxel_objective


def random_problem(seed, code_dim=125, hidden=128, n_vox=2, per_vox=12):
    rng = np.random.default_rng(seed)
    voxel = float(rng.uniform(0.05, 2.0))
    dec = make_decoder(code_dim, voxel, seed=seed, hidden_dim=hidden, dtype=np.float64)
    for layer in dec.mlp:
        layer.biases[:] = 0.05 * rng.standard_normal(layer.biases.shape)
    codes = rng.standard_normal((n_vox, code_dim)) * rng.uniform(0.01, 0.5)
    seg = np.repeat(np.arange(n_vox), per_vox)
    local = rng.uniform(-1.5, 1.5, (len(seg), 3)) * voxel
    sdf = rng.uniform(-3.0, 3.0, len(seg)) * voxel
    weights = rng.uniform(0.05, 1.0, len(seg))
    reg = float(10 ** rng.uniform(-5, -2))
    return dec, codes, local, sdf, weights, seg, reg


def _run_layers(layers, x, start, slope):
    """Apply ``layers[start:]`` to ``x``; returns the output and the pre-activation sign patterns."""
    pattern = []
    for i in range(start, len(layers)):
        w, b = layers[i]
        x = x @ w.T + b
        if i < len(layers) - 1:
            pattern.append(np.signbit(x).ravel())
            x = np.where(x > 0, x, slope * x)
    return x[:, 0], pattern


class _Reference:
    """Straight-line objective in long double.

    The loss is a sum of independent per-voxel terms, so a probe only
    recomputes what the perturbed entry can change: the layers from the
    perturbed one onwards, or the single voxel that owns a perturbed code.
    """

    def __init__(self, dec, layers, codes, local, sdf, weights, seg, reg):
        L = np.longdouble
        self.layers, self.codes, self.seg = layers, codes, seg
        self.reg = L(reg)
        self.slope = L(dec.spec.leaky_slope)
        self.local = local.astype(L) / L(dec.voxel_size)
        scale = L(np.arctanh(L(dec.tanh_clamp))) / (L(2) * L(dec.voxel_size))
        self.target = np.tanh(sdf.astype(L) * scale)
        self.weights = weights.astype(L)
        self.wsum = np.zeros(len(codes), dtype=L)
        np.add.at(self.wsum, seg, self.weights)
        # inputs of every layer at the unperturbed point, with their sign patterns
        x = np.concatenate([codes[seg], self.local], axis=1)
        self.inputs, self.patterns = [], []
        for i, (w, b) in enumerate(layers[:-1]):
            self.inputs.append(x)
            x = x @ w.T + b
            self.patterns.append(np.signbit(x).ravel())
            x = np.where(x > 0, x, self.slope * x)
        self.inputs.append(x)

    def _data(self, y, rows):
        resid = np.tanh(y) - self.target[rows]
        seg = self.seg[rows]
        data = np.zeros(len(self.codes), dtype=np.longdouble)
        np.add.at(data, seg, self.weights[rows] * np.abs(resid))
        used = np.unique(seg)
        return np.sum(data[used] / self.wsum[used]), np.signbit(resid)

    def layer_probe(self, k):
        """Objective minus the code regularizer after perturbing layer ``k``."""
        y, pattern = _run_layers(self.layers, self.inputs[k], k, self.slope)
        rows = np.arange(len(self.seg))
        total, sign = self._data(y, rows)
        return total, np.concatenate(self.patterns[:k] + pattern + [sign])

    def code_probe(self, v):
        """Terms owned by voxel ``v`` after perturbing its code."""
        rows = np.nonzero(self.seg == v)[0]
        x = np.concatenate([np.broadcast_to(self.codes[v], (len(rows), self.codes.shape[1])), self.local[rows]], axis=1)
        y, pattern = _run_layers(self.layers, x, 0, self.slope)
        total, sign = self._data(y, rows)
        return total + self.reg * np.sum(self.codes[v] * self.codes[v]), np.concatenate(pattern + [sign])


def check_problem(seed, n_params=20, n_codes=20, h=1e-6, rtol=1e-4):
    """Returns (max relative error over compared components, compared, screened)."""
    dec, codes, local, sdf, weights, seg, reg = random_problem(seed)
    _, pgrads, cgrads = voxel_objective(dec, codes, local, sdf, weights, seg, reg)
    rng = np.random.default_rng([seed, 99])
    L = np.longdouble
    layers = [(layer.weights.astype(L), layer.biases.astype(L)) for layer in dec.mlp]
    codes_ld = codes.astype(L)
    ref = _Reference(dec, layers, codes_ld, local, sdf, weights, seg, reg)
    # (float64 array, long double mirror, analytic gradient, probe)
    arrays = [(layer.weights, ld[0], g.weights, k) for k, (layer, ld, g) in enumerate(zip(dec.mlp, layers, pgrads))]
    arrays += [(layer.biases, ld[1], g.biases, k) for k, (layer, ld, g) in enumerate(zip(dec.mlp, layers, pgrads))]
    targets = []
    for _ in range(n_params):
        arr, mirror, garr, k = arrays[rng.integers(len(arrays))]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        targets.append((arr, mirror, idx, float(garr[idx]), lambda k=k: ref.layer_probe(k)))
    for _ in range(n_codes):
        idx = (int(rng.integers(codes.shape[0])), int(rng.integers(codes.shape[1])))
        targets.append((codes, codes_ld, idx, float(cgrads[idx]), lambda v=idx[0]: ref.code_probe(v)))

    def probe(mirror, idx, value, evaluate):
        # step taken in float64, as an optimizer would
        mirror[idx] = L(value)
        return evaluate()

    worst, compared, screened = 0.0, 0, 0
    for arr, mirror, idx, analytic, evaluate in targets:
        old = float(arr[idx])
        hi, lo = old + h, old - h
        fp, pp = probe(mirror, idx, hi, evaluate)
        fm, pm = probe(mirror, idx, lo, evaluate)
        mirror[idx] = L(old)
        if not np.array_equal(pp, pm):
            screened += 1
            continue
        fd = float((fp - fm) / (L(hi) - L(lo)))
        scale = max(abs(fd), abs(analytic))
        err = 0.0 if scale < 1e-9 and abs(fd - analytic) < 1e-11 else abs(fd - analytic) / scale
        worst = max(worst, err)
        compared += 1
    return worst, compared, screened

