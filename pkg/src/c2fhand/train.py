"""Adam, training configuration, the training loop and evaluation."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .hierarchy import load_hierarchy
from .model import HandModel, preset_channels, preset_hierarchy, topology_key
from .nn.tensor import NonFiniteError, backward, no_grad, precision
from .nn.tensorio import load_checkpoint, save_checkpoint
from .objectives import LossWeights, aggregate, sample_metrics
from .synth import SynthConfig, fingertip_regressor, generate_synthetic, load_dataset


class TrainingError(RuntimeError):
    def __init__(self, message, batch_index=None):
        super().__init__(message if batch_index is None else f"{message} (batch {batch_index})")
        self.batch_index = batch_index


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k])
        if g.shape != np.shape(p):
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter {np.shape(p)} for {k}")
        m = beta1 * state.m.get(k, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        new_p[k] = p - lr * mh / (np.sqrt(vh) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------- config

@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-4
    decay_epoch: int = 35
    decay_factor: float = 0.1
    preset: str = "full"  # hierarchy / channel preset
    hierarchy: str | None = None  # JSON file overriding the preset
    dataset: str | None = None  # dataset directory; synthetic when None
    n_train: int = 8
    data_seed: int = 0
    checkpoint_dir: str = "checkpoint"
    log_path: str | None = None
    dtype: str = "float64"
    weights: LossWeights = field(default_factory=LossWeights)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch_size >= 1 required")

    @classmethod
    def full(cls, **kw):
        ch = preset_channels("full")
        base = dict(preset="full", encoder=EncoderConfig(ch), decoder=DecoderConfig(widths=ch))
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw):
        ch = preset_channels("desk")
        base = dict(preset="desk", epochs=1500, decay_epoch=1200, batch_size=8, lr=1e-3, n_train=8,
                    encoder=EncoderConfig(ch), decoder=DecoderConfig(widths=ch, spiral_lengths=(12,) * 4))
        base.update(kw)
        return cls(**base)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor if epoch >= self.decay_epoch else self.lr

    def to_json(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_json()
        for key in ("decoder", "encoder"):
            d[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[key].items()}
        d["synth"] = self.synth.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        preset = d.get("preset", "full")
        base = cls.desk() if preset == "desk" else cls.full()

        def sub(klass, key, current, tuples):
            vals = asdict(current)
            vals.update(d.pop(key, {}) or {})
            for t in tuples:
                if t in vals:
                    vals[t] = tuple(vals[t])
            return klass(**vals)

        weights = sub(LossWeights, "weights", base.weights, ("lambda_m",))
        dec = sub(DecoderConfig, "decoder", base.decoder, ("widths", "spiral_lengths"))
        enc = sub(EncoderConfig, "encoder", base.encoder, ("channels",))
        syn = SynthConfig.from_json({**base.synth.to_json(), **(d.pop("synth", {}) or {})})
        vals = {k: v for k, v in asdict(base).items() if k not in ("weights", "decoder", "encoder", "synth")}
        unknown = set(d) - set(vals)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        vals.update(d)
        return cls(**vals, weights=weights, decoder=dec, encoder=enc, synth=syn)


def load_config(path) -> TrainConfig:
    return TrainConfig.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: HandModel
    log: list  # one record per optimizer step
    epochs: list  # one record per epoch
    seconds: float


def resolve_hierarchy(cfg: TrainConfig):
    return load_hierarchy(cfg.hierarchy) if cfg.hierarchy else preset_hierarchy(cfg.preset)


def resolve_dataset(cfg: TrainConfig, hier):
    if cfg.dataset:
        return load_dataset(cfg.dataset, hier)
    return generate_synthetic(cfg.n_train, hier, seed=cfg.data_seed, cfg=cfg.synth)


def _parts_json(total, parts):
    out = {k: float(v.data) for k, v in parts.items()}
    out["total"] = float(total.data)
    return out


def train(cfg: TrainConfig, hier=None, dataset=None, model=None, write: bool = True, log_fn=None) -> TrainResult:
    """Minibatch Adam training; returns the trained model and logs."""
    dtype = np.dtype(cfg.dtype).type
    t0 = time.perf_counter()
    with precision(dtype):
        hier = hier if hier is not None else resolve_hierarchy(cfg)
        dataset = dataset if dataset is not None else resolve_dataset(cfg, hier)
        if len(dataset) == 0:
            raise TrainingError("empty training set")
        model = model or HandModel.build(hier, cfg.encoder, cfg.decoder, seed=cfg.seed)
        model.params.astype(dtype)
        rng = np.random.default_rng(cfg.seed)
        state = AdamState()
        log, epochs = [], []
        step = 0
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(len(dataset))
            ep_losses = []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = dataset.batch(order[start : start + cfg.batch_size])
                model.params.zero_grad()
                try:
                    total, parts, _ = model.losses(batch, cfg.weights)
                    if not np.isfinite(total.data):
                        raise NonFiniteError("loss is not finite")
                    backward(total)
                except (NonFiniteError, FloatingPointError) as exc:
                    raise TrainingError(f"non-finite value at epoch {epoch}: {exc}", batch_index=b) from exc
                names = list(model.params)
                new, state = adam_step({k: model.params[k].data for k in names},
                                       {k: model.params[k].grad for k in names}, state, lr)
                for k in names:
                    model.params[k].data = new[k].astype(dtype, copy=False)
                rec = {"step": step, "epoch": epoch, "batch": b, "lr": lr, **_parts_json(total, parts)}
                log.append(rec)
                ep_losses.append(rec)
                if log_fn:
                    log_fn(rec)
                step += 1
            epochs.append({"epoch": epoch, "lr": lr,
                           **{k: float(np.mean([r[k] for r in ep_losses])) for k in ("total", "mesh", "edge", "norm", "sil", "pose")}})
        result = TrainResult(model, log, epochs, time.perf_counter() - t0)
        if write:
            write_outputs(cfg, result)
        return result


def checkpoint_extra(cfg: TrainConfig, model: HandModel) -> dict:
    return {"config": cfg.to_json(), "topology": topology_key(model.hier), "counts": model.hier.counts}


def write_outputs(cfg: TrainConfig, result: TrainResult) -> None:
    save_checkpoint(cfg.checkpoint_dir, result.model.params.arrays(), checkpoint_extra(cfg, result.model))
    log_path = Path(cfg.log_path) if cfg.log_path else Path(cfg.checkpoint_dir) / "train_log.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        for rec in result.epochs:
            fh.write(json.dumps(rec) + "\n")


def load_model(ckpt_dir, hier=None) -> tuple[HandModel, TrainConfig]:
    arrays, manifest = load_checkpoint(ckpt_dir)
    cfg = TrainConfig.from_json(manifest["config"])
    hier = hier if hier is not None else resolve_hierarchy(cfg)
    if topology_key(hier) != manifest.get("topology"):
        raise ValueError("checkpoint topology does not match the hierarchy")
    with precision(np.dtype(cfg.dtype).type):
        model = HandModel.build(hier, cfg.encoder, cfg.decoder, seed=cfg.seed)
        model.params.load_arrays(arrays)
    return model, cfg


# ---------------------------------------------------------------- evaluation

def predict(model: HandModel, dataset, batch_size: int = 16, dtype=np.float64) -> list:
    """Per-level predicted vertex arrays (coarse -> fine) for every sample."""
    out = []
    with precision(dtype), no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.batch(range(start, min(len(dataset), start + batch_size)))
            decoded, _ = model.forward(batch["images"], batch["cams"])
            for i in range(batch["images"].shape[0]):
                out.append([m.data[i].astype(np.float64) for m in decoded.meshes])
    return out


def evaluate_predictions(pred_fine, dataset, regressor):
    per = []
    for p, s in zip(pred_fine, dataset.samples):
        if p.shape != s.meshes[0].shape:
            raise ValueError("prediction / ground-truth topology mismatch")
        per.append(sample_metrics(p, s.meshes[0], regressor))
    return aggregate(per)


def evaluate(model: HandModel, dataset, regressor=None, batch_size: int = 16):
    if len(dataset) and dataset.samples[0].meshes[0].shape[0] != model.hier.levels[0].n_vertices:
        raise ValueError("checkpoint topology does not match the dataset")
    regressor = regressor if regressor is not None else fingertip_regressor(model.hier.levels[0].vertices)
    preds = predict(model, dataset, batch_size)
    return evaluate_predictions([p[-1] for p in preds], dataset, regressor)


def dataset_losses(model: HandModel, dataset, weights: LossWeights, batch_size: int = 16) -> dict:
    """Loss parts averaged over the dataset with the current parameters."""
    acc, n = {}, 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = range(start, min(len(dataset), start + batch_size))
            total, parts, _ = model.losses(dataset.batch(idx), weights)
            for k, v in _parts_json(total, parts).items():
                acc[k] = acc.get(k, 0.0) + v * len(idx)
            n += len(idx)
    return {k: v / n for k, v in acc.items()}


def bbox_diagonal(vertices) -> float:
    v = np.asarray(vertices)
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
