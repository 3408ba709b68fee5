"""Mapping-mode and attention ablations under identical training budgets."""
from __future__ import annotations

import copy

import numpy as np

from .synth import generate_synthetic
from .train import TrainConfig, evaluate, dataset_losses, resolve_hierarchy, train

# The mapping modes are compared without attention, so only the mapping differs;
# attention is then added on top of the pixel-aligned model.
VARIANTS = {
    "pixel_aligned": {"mapping_mode": "pixel_aligned", "attention": True},
    "pixel_aligned_noattn": {"mapping_mode": "pixel_aligned", "attention": False},
    "global_mlp": {"mapping_mode": "global_mlp", "attention": False},
    "global_repeat": {"mapping_mode": "global_repeat", "attention": False},
}


def variant_config(base: TrainConfig, name: str, seed: int) -> TrainConfig:
    cfg = copy.deepcopy(base)
    cfg.seed = seed
    for k, v in VARIANTS[name].items():
        setattr(cfg.decoder, k, v)
    cfg.decoder.__post_init__()
    return cfg


def run_ablation(base: TrainConfig, seeds=(0, 1, 2), variants=None, hier=None, log_fn=None) -> dict:
    """Train every variant on the same per-seed dataset; report final training metrics.

    Returns {variant: {"pa_mpvpe": [...], "pa_mpjpe": [...], "mesh": [...]}} ordered by seed.
    """
    variants = list(variants or VARIANTS)
    hier = hier if hier is not None else resolve_hierarchy(base)
    out = {v: {"pa_mpvpe": [], "pa_mpjpe": [], "f5": [], "mesh": []} for v in variants}
    for seed in seeds:
        data = generate_synthetic(base.n_train, hier, seed=seed, cfg=base.synth)
        for name in variants:
            cfg = variant_config(base, name, seed)
            res = train(cfg, hier=hier, dataset=data, write=False)
            rep = evaluate(res.model, data)
            fin = dataset_losses(res.model, data, cfg.weights)
            out[name]["pa_mpvpe"].append(rep.pa_mpvpe)
            out[name]["pa_mpjpe"].append(rep.pa_mpjpe)
            out[name]["f5"].append(rep.f5)
            out[name]["mesh"].append(fin["mesh"])
            if log_fn:
                log_fn({"seed": seed, "variant": name, "pa_mpvpe": rep.pa_mpvpe, "mesh": fin["mesh"],
                        "seconds": res.seconds})
    return out


def summary_table(results: dict, metric: str = "pa_mpvpe") -> str:
    lines = [f"{'variant':<22}{'mean':>10}{'std':>10}  per-seed"]
    for name, vals in results.items():
        v = np.asarray(vals[metric])
        lines.append(f"{name:<22}{v.mean():>10.3f}{v.std():>10.3f}  " + " ".join(f"{x:.3f}" for x in v))
    return "\n".join(lines)


def ordering_holds(results: dict, metric: str = "pa_mpvpe") -> dict:
    m = {k: float(np.mean(v[metric])) for k, v in results.items()}
    checks = {}
    if {"pixel_aligned_noattn", "global_mlp", "global_repeat"} <= set(m):
        checks["pixel_aligned < global_mlp < global_repeat (no attention)"] = (
            m["pixel_aligned_noattn"] < m["global_mlp"] < m["global_repeat"])
    if {"pixel_aligned", "pixel_aligned_noattn"} <= set(m):
        checks["attention <= no attention (pixel_aligned)"] = m["pixel_aligned"] <= m["pixel_aligned_noattn"]
    if {"pixel_aligned", "global_mlp"} <= set(m):
        checks["pixel_aligned (attention) < global_mlp"] = m["pixel_aligned"] < m["global_mlp"]
    return checks
