"""Acceptance suite: one test (and one PASS/FAIL line) per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the PASS/FAIL lines are
repeated in the "acceptance criteria" section of the terminal summary.
"""
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from c2fhand.ablation import ordering_holds, run_ablation, summary_table
from c2fhand.decoder import DecoderConfig, MeshDecoder, template_chain
from c2fhand.encoder import Encoder, EncoderConfig
from c2fhand.gradsuite import TOLERANCE, run_suite
from c2fhand.hierarchy import build_hierarchy, pool, unpool
from c2fhand.mesh import vertex_adjacency
from c2fhand.model import HandModel, preset_hierarchy
from c2fhand.nn import functional as F
from c2fhand.nn.tensor import Tensor
from c2fhand.objectives import (
    LossWeights,
    edge_loss,
    f_score,
    gt_face_normals,
    mesh_l1,
    normal_loss,
    pa_metrics,
    total_loss,
)
from c2fhand.spiral import DEFAULT_LENGTH, check_spiral_row, precompute_spirals, spiral_table
from c2fhand.synth import fingertip_regressor, generate_synthetic
from c2fhand.templates import hand_template, icosahedron
from c2fhand.train import AdamState, TrainConfig, adam_step, bbox_diagonal, dataset_losses, evaluate, train

OVERFIT_STEPS = 2000
ABLATION_SEEDS = (0, 1, 2)
ABLATION_N = 8
ABLATION_STEPS = 2000  # same data size and budget as the overfit check


# ---------------------------------------------------------------- 1

def test_hierarchy_fidelity(report_line):
    t0 = time.perf_counter()
    hier = build_hierarchy(hand_template(), targets=[778, 389, 195, 98])
    secs = time.perf_counter() - t0
    counts_ok = hier.counts == [778, 389, 195, 98]
    du_ok = all(np.array_equal((D.to_scipy() @ U.to_scipy()).toarray(), np.eye(D.rows))
                for D, U in zip(hier.down, hier.up))
    row_err = max(float(np.max(np.abs(np.asarray(U.to_scipy().sum(axis=1)).ravel() - 1))) for U in hier.up)
    ok = counts_ok and du_ok and row_err <= 1e-12 and secs < 30
    report_line(1, "hierarchy fidelity", ok,
                f"counts {hier.counts}, D.U=I {du_ok}, max |rowsum-1| {row_err:.1e}, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2

def _violations(mesh, table):
    adj = vertex_adjacency(mesh)
    return sum(bool(check_spiral_row(adj, row)) for row in table)


def test_spiral_contract(report_line):
    t0 = time.perf_counter()
    tpl, ico = hand_template(), icosahedron()
    tables = {"template": spiral_table(tpl), "icosahedron": spiral_table(ico)}
    bad = _violations(tpl, tables["template"]) + _violations(ico, tables["icosahedron"])
    det = all(np.array_equal(spiral_table(m), tables[k]) for k, m in (("template", tpl), ("icosahedron", ico)))
    secs = time.perf_counter() - t0
    ok = bad == 0 and det and DEFAULT_LENGTH == 27 and tables["template"].shape == (778, 27) and secs < 30
    report_line(2, "spiral contract", ok, f"violating rows {bad}, deterministic {det}, l={DEFAULT_LENGTH}, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3

def test_gradient_suite(report_line):
    t0 = time.perf_counter()
    res = run_suite(seed=0)
    secs = time.perf_counter() - t0
    worst = max(res, key=res.get)
    required = {"linear", "conv2d", "conv1d_fuse", "spiral_conv", "mhsa", "bilinear_sample",
                "mesh_l1", "edge_loss", "normal_loss", "bce_heatmap", "total_loss"}
    ok = required <= set(res) and res[worst] < TOLERANCE and secs < 300
    report_line(3, "gradient suite", ok, f"{len(res)} cases, worst {worst} {res[worst]:.2e}, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------- 4

def _bilinear_loop(data, grid):
    h, w, c = data.shape
    out = np.zeros((len(grid), c))
    for n, (x, y) in enumerate(grid):
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        ax, ay = x - x0, y - y0
        for ch in range(c):
            out[n, ch] = ((1 - ax) * (1 - ay) * data[y0, x0, ch] + ax * (1 - ay) * data[y0, x1, ch]
                          + (1 - ax) * ay * data[y1, x0, ch] + ax * ay * data[y1, x1, ch])
    return out


def _f_loop(pred, gt, tau):
    def frac(a, b):
        return sum(min(np.linalg.norm(p - q) for q in b) < tau for p in a) / len(a)

    P, R = frac(pred, gt), frac(gt, pred)
    return 0.0 if P + R == 0 else 2 * P * R / (P + R)


def _adam_scalar(x, a, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2 * a * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        out.append(x)
    return out


def test_oracle_equivalences(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errs = {}

    hier = preset_hierarchy("desk")
    for k, (mesh, table) in enumerate(zip(hier.levels, precompute_spirals(hier, 12))):
        X = rng.standard_normal((2, mesh.n_vertices, 5))
        W, b = rng.standard_normal((12 * 5, 3)), rng.standard_normal(3)
        Xp = np.concatenate([X, np.zeros((2, 1, 5))], axis=1)  # row -1 is the zero pad
        ref = Xp[:, table].reshape(2, mesh.n_vertices, -1) @ W + b
        errs[f"spiral_conv[{k}]"] = float(np.max(np.abs(F.spiral_conv(X, table, W, b).data - ref)))

    data = rng.standard_normal((2, 6, 7, 4))
    grid = rng.uniform(-1.5, 8.0, (2, 40, 2))
    out = F.bilinear_sample(data, grid).data
    errs["bilinear_sample"] = max(float(np.max(np.abs(out[i] - _bilinear_loop(data[i], grid[i])))) for i in range(2))

    pu = 0.0
    for D, U in zip(hier.down, hier.up):
        X, Y = rng.standard_normal((D.cols, 3)), rng.standard_normal((D.rows, 3))
        pu = max(pu, float(np.max(np.abs(pool(D, X) - D.to_dense() @ X))),
                 float(np.max(np.abs(unpool(U, Y) - U.to_dense() @ Y))))
    errs["pool/unpool"] = pu

    fs = 0.0
    for _ in range(30):
        p = rng.uniform(0, 20, (10, 3))
        g = np.vstack([p[:6] + rng.standard_normal((6, 3)), rng.uniform(0, 20, (4, 3))])
        for tau in (2.0, 5.0, 15.0):
            fs = max(fs, abs(f_score(p, g, tau) - _f_loop(p, g, tau)))
    errs["f_score"] = fs

    a, x0 = np.array([0.5, 2.0, 7.0]), np.array([1.0, -3.0, 0.25])
    p, st = {"x": x0.copy()}, AdamState()
    traj = []
    for _ in range(10):
        p, st = adam_step(p, {"x": 2 * a * p["x"]}, st, lr=0.05)
        traj.append(p["x"].copy())
    errs["adam"] = max(abs(traj[i][j] - r) for j in range(3)
                       for i, r in enumerate(_adam_scalar(float(x0[j]), float(a[j]), 10, 0.05)))
    secs = time.perf_counter() - t0
    tol = {"f_score": 0.0, "adam": 1e-12, "bilinear_sample": 1e-12}
    ok = all(v <= tol.get(k.split("[")[0], 1e-9) for k, v in errs.items()) and secs < 120
    worst = max(errs, key=errs.get)
    report_line(4, "oracle equivalences", ok, f"{len(errs)} checks, worst {worst} {errs[worst]:.1e}, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------- 5

@pytest.mark.parametrize("preset", ["desk", "full"])
def test_identity_data_path(report_line, preset, desk_hier, full_hier):
    hier = desk_hier if preset == "desk" else full_hier
    ch = (8, 16, 32, 64) if preset == "desk" else (4, 4, 4, 4)
    lengths = (12,) * 4 if preset == "desk" else (9,) * 4
    model = HandModel.build(hier, EncoderConfig(ch), DecoderConfig(widths=ch, spiral_lengths=lengths))
    for k in range(4):
        model.params[f"dec{k}.head.w"].data[:] = 0
        model.params[f"dec{k}.head.b"].data[:] = 0
    chain = template_chain(hier)  # coarse -> fine
    ds = generate_synthetic(2, hier, seed=0)
    batch = ds.batch([0, 1])
    batch["meshes"] = [np.stack([c, c]) for c in chain[::-1]]
    _, parts, decoded = model.losses(batch, LossWeights())
    exact = all(np.array_equal(m.data[i], c) for m, c in zip(decoded.meshes, chain) for i in range(2))
    vals = {k: abs(float(parts[k].data)) for k in ("mesh", "edge", "norm")}
    ok = exact and max(vals.values()) <= 1e-12
    report_line(5, f"identity data path ({preset})", ok,
                f"bit-exact {exact}, " + ", ".join(f"{k} {v:.1e}" for k, v in vals.items()))
    assert ok


# ---------------------------------------------------------------- 6

def test_metric_identities(report_line, full_hier):
    V = full_hier.levels[0].vertices
    J = fingertip_regressor(V)
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        R = Rotation.random(random_state=seed).as_matrix()
        P = rng.uniform(0.5, 2.0) * V @ R.T + rng.standard_normal(3) * 100
        worst = max(worst, *pa_metrics(P, V, J))
    f5, f15 = f_score(V, V, 5.0), f_score(V, V, 15.0)
    ok = worst <= 1e-6 and f5 == 1.0 and f15 == 1.0
    report_line(6, "metric identities", ok, f"max PA error {worst:.1e} mm, F@5 {f5}, F@15 {f15}")
    assert ok


# ---------------------------------------------------------------- 7

@pytest.fixture(scope="module")
def overfit_run(desk_hier):
    steps = OVERFIT_STEPS
    cfg = TrainConfig.desk(epochs=steps, decay_epoch=int(0.8 * steps), n_train=8, batch_size=8)
    data = generate_synthetic(cfg.n_train, desk_hier, seed=cfg.data_seed)
    t0 = time.perf_counter()
    res = train(cfg, hier=desk_hier, dataset=data, write=False)
    secs = time.perf_counter() - t0
    return cfg, data, res, secs


def test_overfit(report_line, overfit_run, desk_hier):
    cfg, data, res, secs = overfit_run
    init = res.log[0]["mesh"]
    final = dataset_losses(res.model, data, cfg.weights)["mesh"]
    mpvpe = evaluate(res.model, data).pa_mpvpe
    diag = bbox_diagonal(desk_hier.levels[0].vertices)
    steps = len(res.log)
    ok = steps <= 2000 and final < 0.1 * init and mpvpe < 0.05 * diag and secs < 1800
    report_line(7, "overfit", ok, f"{steps} steps, L_mesh {init:.2f} -> {final:.3f} (ratio {final / init:.3f}), "
                f"PA-MPVPE {mpvpe:.2f} mm < {0.05 * diag:.2f} mm, {secs:.0f}s")
    assert ok


def test_overfit_loss_trend(overfit_run):
    """Mean loss of each 50-step window does not exceed the previous window by more than 5%."""
    _, _, res, _ = overfit_run
    total = np.array([r["total"] for r in res.log])
    w = total[: len(total) // 50 * 50].reshape(-1, 50).mean(axis=1)
    assert np.all(w[1:] <= 1.05 * w[:-1]), np.round(w, 3)


# ---------------------------------------------------------------- 8

def test_ablation_ordering(report_line, desk_hier, capsys):
    epochs = max(1, ABLATION_STEPS * 8 // ABLATION_N)
    base = TrainConfig.desk(epochs=epochs, decay_epoch=int(0.8 * epochs), n_train=ABLATION_N, batch_size=8)
    t0 = time.perf_counter()
    res = run_ablation(base, seeds=ABLATION_SEEDS, hier=desk_hier)
    secs = time.perf_counter() - t0
    checks = ordering_holds(res)
    ok = all(checks.values()) and len(checks) == 3 and secs < 7200
    means = {k: float(np.mean(v["pa_mpvpe"])) for k, v in res.items()}
    with capsys.disabled():
        print("\ntraining PA-MPVPE (mm)\n" + summary_table(res))
        print("training L_mesh\n" + summary_table(res, "mesh"))
    report_line(8, "ablation ordering", ok,
                ", ".join(f"{k} {v:.3f}" for k, v in means.items()) + f"; "
                + ", ".join(f"{k}: {v}" for k, v in checks.items()) + f"; {secs:.0f}s")
    assert ok


# ---------------------------------------------------------------- 9

def test_loss_arithmetic(report_line):
    ones = {k: Tensor(np.array(1.0)) for k in ("mesh", "edge", "norm", "sil", "pose")}
    val = float(total_loss(ones, LossWeights()).data)
    ok = val == 14.6
    report_line(9, "loss arithmetic", ok, f"total {val!r}")
    assert ok
