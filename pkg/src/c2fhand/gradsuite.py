"""Finite-difference checks for every differentiable primitive and loss.

Inputs are kept small in magnitude so float64 central differences resolve
the gradients well below the 1e-6 acceptance level.
"""
from __future__ import annotations

import numpy as np

from .nn import functional as F
from .nn.gradcheck import grad_check
from .nn.tensor import Tensor, precision, tsum
from .objectives import bce_heatmap, edge_loss, gt_face_normals, mesh_l1, normal_loss, total_loss
from .spiral import spiral_table
from .templates import icosahedron

TOLERANCE = 1e-6


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def _weighted(out, rng):
    """Random projection to a scalar so every output entry contributes."""
    w = rng.standard_normal(out.shape)
    return tsum(out * w)


def cases(seed: int = 0) -> dict:
    """name -> (fn, inputs) pairs; each fn closes over its inputs."""
    rng = np.random.default_rng(seed)
    ico = icosahedron()
    table = spiral_table(ico, 9)
    out = {}

    X, W, b = _t(rng, 2, 5, 4), _t(rng, 4, 3), _t(rng, 3)
    pw = rng.standard_normal((2, 5, 3))
    out["linear"] = (lambda: tsum(F.linear(X, W, b) * pw), {"X": X, "W": W, "b": b})

    Xc, K, kb = _t(rng, 2, 6, 6, 3), _t(rng, 3, 3, 3, 4, scale=0.5), _t(rng, 4)
    pc = rng.standard_normal((2, 3, 3, 4))
    out["conv2d"] = (lambda: tsum(F.conv2d(Xc, K, kb, stride=2, pad=1) * pc), {"X": Xc, "K": K, "b": kb})

    Fm, Hm, Wf, bf = _t(rng, 2, 3, 3, 2), _t(rng, 2, 3, 3, 2), _t(rng, 4, 2), _t(rng, 2)
    pf = rng.standard_normal((2, 3, 3, 2))
    out["conv1d_fuse"] = (lambda: tsum(F.conv1d_fuse(Fm, Hm, Wf, bf) * pf), {"F": Fm, "H": Hm, "W": Wf, "b": bf})

    Xs, Ws, bs = _t(rng, 2, 12, 3), _t(rng, 27, 4, scale=0.3), _t(rng, 4)
    ps = rng.standard_normal((2, 12, 4))
    out["spiral_conv"] = (lambda: tsum(F.spiral_conv(Xs, table, Ws, bs) * ps), {"X": Xs, "W": Ws, "b": bs})

    Xa = _t(rng, 2, 6, 8, scale=0.5)
    Wq, Wk, Wv, Wo = (_t(rng, 8, 8, scale=0.3) for _ in range(4))
    pa = rng.standard_normal((2, 6, 8))
    out["mhsa"] = (lambda: tsum(F.mhsa(Xa, Wq, Wk, Wv, Wo, heads=2) * pa),
                   {"X": Xa, "Wq": Wq, "Wk": Wk, "Wv": Wv, "Wo": Wo})

    Xl, gl, bl = _t(rng, 2, 6, 8), _t(rng, 8), _t(rng, 8)
    pl = rng.standard_normal((2, 6, 8))
    out["layer_norm"] = (lambda: tsum(F.layer_norm(Xl, gl, bl) * pl), {"X": Xl, "gain": gl, "bias": bl})

    fmap = _t(rng, 2, 5, 6, 3)
    grid = Tensor(rng.uniform(0.2, 4.3, (2, 7, 2)) + np.array([0.013, 0.0]))
    pb = rng.standard_normal((2, 7, 3))
    out["bilinear_sample"] = (lambda: tsum(F.bilinear_sample(fmap, grid) * pb), {"map": fmap, "grid": grid})

    V = Tensor(rng.standard_normal((2, 9, 3)) * 10 + np.array([0.0, 0.0, 300.0]))
    cams = np.array([[120.0, 118.0, 32.0, 31.0], [126.0, 126.0, 30.5, 33.0]])
    pp = rng.standard_normal((2, 9, 2))
    out["project_points"] = (lambda: tsum(F.project_points(V, cams) * pp), {"V": V})

    fm2 = _t(rng, 2, 8, 8, 3)
    Vs = Tensor(rng.uniform(-20, 20, (2, 9, 3)) + np.array([0.0, 0.0, 400.0]))
    pv = rng.standard_normal((2, 9, 3))
    out["sample_vertex_features"] = (
        lambda: tsum(F.sample_vertex_features(fm2, Vs, cams, (64, 64)) * pv), {"map": fm2, "V": Vs})

    Pu = _t(rng, 2, 4, 6)
    out["upsample2x"] = (lambda: _weighted_fixed(F.upsample2x(Pu), 11), {"X": Pu})

    gts = [rng.standard_normal((2, n, 3)) for n in (4, 12)]
    preds = [Tensor(g + rng.standard_normal(g.shape)) for g in gts]
    out["mesh_l1"] = (lambda: mesh_l1(preds, gts, (0.5, 1.0)), {"coarse": preds[0], "fine": preds[1]})

    gtv = ico.vertices * 20.0
    Ve = Tensor(gtv + rng.standard_normal(gtv.shape) * 2.0)
    out["edge_loss"] = (lambda: edge_loss(Ve, gtv, ico.faces), {"V": Ve})

    normals = gt_face_normals(gtv, ico.faces)
    Vn = Tensor(gtv + rng.standard_normal(gtv.shape) * 2.0)
    out["normal_loss"] = (lambda: normal_loss(Vn, normals, ico.faces), {"V": Vn})

    z = _t(rng, 2, 4, 4, 3)
    tgt = rng.uniform(0, 1, (2, 4, 4, 3))
    out["bce_heatmap"] = (lambda: bce_heatmap(z, tgt), {"logits": z})

    parts_in = {k: _t(rng, 3) for k in ("mesh", "edge", "norm", "sil", "pose")}
    out["total_loss"] = (lambda: total_loss({k: tsum(v * v) for k, v in parts_in.items()}), parts_in)
    return out


def _weighted_fixed(out, seed):
    return _weighted(out, np.random.default_rng(seed))


def run_suite(seed: int = 0, names=None) -> dict:
    """name -> max relative error over all inputs."""
    results = {}
    with precision(np.float64):
        for name, (fn, inputs) in cases(seed).items():
            if names and name not in names:
                continue
            results[name] = grad_check(fn, inputs).max_rel_error
    return results
