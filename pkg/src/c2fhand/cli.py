"""Command-line entry point: ``c2fhand <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .hierarchy import SparseMatrix, build_hierarchy, load_hierarchy, save_hierarchy
from .mesh import TriMesh, load_obj, save_obj
from .spiral import DEFAULT_LENGTH, precompute_spirals, save_spirals


def _hierarchy_from_args(args):
    from .model import preset_hierarchy

    if getattr(args, "hierarchy", None):
        return load_hierarchy(args.hierarchy)
    return preset_hierarchy(args.preset)


def save_regressor(J: SparseMatrix, path) -> None:
    Path(path).write_text(json.dumps({"rows": J.rows, "cols": J.cols, "triplets": J.triplets()}))


def load_regressor(path) -> SparseMatrix:
    d = json.loads(Path(path).read_text())
    return SparseMatrix.from_triplets(d["rows"], d["cols"], d["triplets"])


# ---------------------------------------------------------------- subcommands

def cmd_hierarchy(args):
    from .templates import hand_template

    mesh = load_obj(args.template) if args.template else hand_template()
    targets = [int(t) for t in args.targets.split(",")] if args.targets else None
    hier = build_hierarchy(mesh, levels=args.levels, factor=args.factor, targets=targets)
    save_hierarchy(hier, args.out)
    print(report.block("hierarchy", f"vertex counts: {hier.counts}\nwritten: {args.out}"))


def cmd_spirals(args):
    hier = load_hierarchy(args.hierarchy)
    lengths = [int(x) for x in args.length.split(",")]
    tables = precompute_spirals(hier, lengths if len(lengths) > 1 else lengths[0])
    save_spirals(tables, args.out)
    print(report.block("spirals", "\n".join(f"level {k}: {t.shape[0]} x {t.shape[1]}" for k, t in enumerate(tables))))


def cmd_synth(args):
    from .synth import SynthConfig, fingertip_regressor, generate_synthetic, save_dataset

    hier = _hierarchy_from_args(args)
    cfg = SynthConfig(image_size=args.image_size, map_size=args.image_size // 4)
    ds = generate_synthetic(args.n, hier, seed=args.seed, cfg=cfg)
    save_dataset(ds, args.out, hier)
    save_regressor(fingertip_regressor(hier.levels[0].vertices, cfg.regressor_k), Path(args.out) / "regressor.json")
    print(report.block("synth", f"{len(ds)} samples -> {args.out}"))


def _train_config(args):
    from .train import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else (TrainConfig.desk() if args.preset == "desk" else TrainConfig.full())
    for key in ("epochs", "lr", "batch_size", "seed", "dataset", "hierarchy"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "out", None):
        cfg.checkpoint_dir = args.out
    cfg.__post_init__()
    return cfg


def cmd_train(args):
    from .train import train

    cfg = _train_config(args)
    log = open(args.log, "w") if args.log else None

    def emit(rec):
        if log:
            log.write(json.dumps(rec) + "\n")
            log.flush()

    res = train(cfg, log_fn=emit)
    if log:
        log.close()
    out = Path(cfg.checkpoint_dir)
    fig = report.plot_loss_curve(res.log, out / "loss_curve.png")
    last = res.epochs[-1] if res.epochs else {}
    body = f"steps: {len(res.log)}  seconds: {res.seconds:.1f}\n" + "\n".join(f"{k}: {v:.6g}" for k, v in last.items())
    print(report.block("train", body + f"\ncheckpoint: {out}\nfigure: {fig}"))


def cmd_eval(args):
    from .synth import load_dataset
    from .train import evaluate, load_model

    model, _ = load_model(args.checkpoint, load_hierarchy(args.hierarchy) if args.hierarchy else None)
    ds = load_dataset(args.dataset, model.hier)
    reg_path = args.regressor or (Path(args.dataset) / "regressor.json")
    J = load_regressor(reg_path) if Path(reg_path).exists() else None
    rep = evaluate(model, ds, J)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({k: rep.to_json()[k] for k in ("pa_mpjpe", "pa_mpvpe", "f5", "f15")}, indent=2))
    (out.with_suffix(".per_sample.json")).write_text(json.dumps(rep.per_sample, indent=2))
    fig = report.plot_metrics(rep, out.with_suffix(".png"))
    print(report.block("eval", rep.table() + f"\nreport: {out}\nfigure: {fig}"))


def cmd_infer(args):
    from .nn.tensorio import read_tensor
    from .nn.tensor import no_grad, precision
    from .sampling import Camera
    from .synth import load_dataset
    from .train import load_model

    model, cfg = load_model(args.checkpoint, load_hierarchy(args.hierarchy) if args.hierarchy else None)
    if args.dataset:
        s = load_dataset(args.dataset, model.hier)[args.index]
        image, cam = s.image, s.camera
    else:
        if not (args.image and args.camera):
            raise ValueError("infer needs --dataset or both --image and --camera")
        image = read_tensor(args.image)
        cam = Camera.from_json(json.loads(Path(args.camera).read_text()))
    with precision(np.dtype(cfg.dtype).type), no_grad():
        decoded, _ = model.forward(image[None].astype(np.dtype(cfg.dtype)), cam.as_array()[None])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    levels = [m.data[0].astype(np.float64) for m in decoded.meshes]  # coarse -> fine
    S = len(levels)
    faces = [model.hier.levels[S - 1 - i].faces for i in range(S)]
    written = []
    for i, (V, Fc) in enumerate(zip(levels, faces)):
        name = f"m{S - i}.obj"
        save_obj(TriMesh(V, Fc), out / name)
        written.append(name)
    (out / "levels.json").write_text(json.dumps({f"m{S - i}": V.tolist() for i, V in enumerate(levels)}))
    fig = report.plot_mesh_levels(levels, faces, out / "levels.png")
    print(report.block("infer", "\n".join(f"{n}: {len(V)} vertices" for n, V in zip(written, levels)) + f"\nfigure: {fig}"))


def cmd_grad_check(args):
    from .gradsuite import TOLERANCE, run_suite

    res = run_suite(seed=args.seed)
    lines = [f"{'PASS' if v < TOLERANCE else 'FAIL'}  {k:<24} {v:.3e}" for k, v in res.items()]
    print(report.block("grad-check", "\n".join(lines)))
    if any(v >= TOLERANCE for v in res.values()):
        raise SystemExit(1)


def cmd_ablation(args):
    from .ablation import ordering_holds, run_ablation, summary_table

    cfg = _train_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_ablation(cfg, seeds=seeds, log_fn=lambda r: print(json.dumps(r), flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(res, indent=2))
    fig = report.plot_ablation(res, out / "ablation.png")
    checks = "\n".join(f"{'PASS' if ok else 'FAIL'}  {k}" for k, ok in ordering_holds(res).items())
    print(report.block("ablation", summary_table(res) + "\n\n" + checks + f"\nfigure: {fig}"))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c2fhand", description="Coarse-to-fine hand mesh reconstruction toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    h = sub.add_parser("hierarchy", help="decimate a template into a mesh hierarchy")
    h.add_argument("--template", help="OBJ file (default: shipped 778-vertex hand)")
    h.add_argument("--levels", type=int, default=4)
    h.add_argument("--factor", type=float, default=2.0)
    h.add_argument("--targets", help="comma-separated vertex counts, finest first")
    h.add_argument("-o", "--out", required=True)
    h.set_defaults(func=cmd_hierarchy)

    s = sub.add_parser("spirals", help="precompute spiral tables for a hierarchy")
    s.add_argument("--hierarchy", required=True)
    s.add_argument("--length", default=str(DEFAULT_LENGTH), help="one length or one per level")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_spirals)

    y = sub.add_parser("synth", help="generate a synthetic dataset directory")
    y.add_argument("--hierarchy")
    y.add_argument("--preset", default="desk", choices=["desk", "full"])
    y.add_argument("-n", type=int, default=8)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--image-size", type=int, default=64)
    y.add_argument("-o", "--out", required=True)
    y.set_defaults(func=cmd_synth)

    for name, func, hlp in (("train", cmd_train, "train a model"), ("ablation", cmd_ablation, "run mapping/attention ablations")):
        t = sub.add_parser(name, help=hlp)
        t.add_argument("--config", help="TrainConfig JSON")
        t.add_argument("--preset", default="desk", choices=["desk", "full"])
        t.add_argument("--epochs", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--dataset")
        t.add_argument("--hierarchy")
        t.add_argument("-o", "--out", required=True)
        if name == "train":
            t.add_argument("--log", help="per-step JSONL log")
        else:
            t.add_argument("--seeds", default="0,1,2")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--hierarchy")
    e.add_argument("--regressor", help="joint regressor JSON (default: <dataset>/regressor.json)")
    e.add_argument("-o", "--out", required=True, help="metrics JSON path")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="decode one image into per-level meshes")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--hierarchy")
    i.add_argument("--dataset")
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--image", help="TNSR image H x W x 3")
    i.add_argument("--camera", help="camera JSON")
    i.add_argument("-o", "--out", required=True)
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("grad-check", help="finite-difference check of every primitive and loss")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # every failure maps to a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
