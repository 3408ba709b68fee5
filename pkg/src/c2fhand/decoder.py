"""Coarse-to-fine mesh decoder: pixel-aligned mapping, spiral GCN blocks,
self-attention and per-level offset heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hierarchy import MeshHierarchy
from .nn import functional as F
from .nn.params import ParamStore
from .nn.tensor import Parameter, Tensor, as_tensor, concat, relu, sparse_matmul

MAPPING_MODES = ("pixel_aligned", "global_repeat", "global_mlp")
TEMPLATE_FEATURE_SCALE = 0.01  # mm -> dm for the seed vertex features


@dataclass
class DecoderConfig:
    widths: tuple = (8, 16, 32, 64)  # per level, finest first; match encoder channels
    spiral_lengths: tuple = (27, 27, 27, 27)
    blocks_per_level: int = 2
    attention: bool = True
    heads: int = 4
    attn_norm: str = "pre"  # "pre": x + MHSA(LN(x)); "none": x + MHSA(x)
    attn_zero_out: bool = True  # zero output projection: attention starts as the identity
    mapping_mode: str = "pixel_aligned"
    sample_grad_coords: bool = True
    offset_scale: float = 10.0  # mm per unit of offset-head output

    def __post_init__(self):
        if self.attn_norm not in ("pre", "none"):
            raise ValueError(f"unknown attention norm {self.attn_norm!r}")
        if self.mapping_mode not in MAPPING_MODES:
            raise ValueError(f"unknown mapping mode {self.mapping_mode!r}")
        if len(self.widths) != len(self.spiral_lengths):
            raise ValueError("widths and spiral_lengths must have one entry per level")
        if self.attention and any(w % self.heads for w in self.widths):
            raise ValueError("every level width must be divisible by the head count")

    @property
    def levels(self) -> int:
        return len(self.widths)


@dataclass
class DecodeResult:
    meshes: list  # vertex tensors B x N_s x 3, coarse -> fine
    features: list  # F_GCN per level, coarse -> fine

    @property
    def finest(self) -> Tensor:
        return self.meshes[-1]


def init_template(hier: MeshHierarchy) -> np.ndarray:
    """Coarsest template level; the decoder's starting mesh."""
    return np.array(hier.levels[-1].vertices, copy=True)


def global_feature_mapping(global_vec, mode: str, n_vertices: int, mlp_params=None) -> Tensor:
    """Vertex features from a global vector: repeat it, or a learned c -> N*c map."""
    g = as_tensor(global_vec)
    squeeze = g.ndim == 1
    if squeeze:
        g = g.reshape((1,) + g.shape)
    B, c = g.shape
    if mode == "global_repeat":
        out = g.reshape(B, 1, c) + np.zeros((1, n_vertices, 1), dtype=g.dtype)
    elif mode == "global_mlp":
        W, b = mlp_params
        out = F.linear(g, W, b).reshape(B, n_vertices, -1)
    else:
        raise ValueError(f"not a global mapping mode: {mode!r}")
    return out.reshape(out.shape[1:]) if squeeze else out


@dataclass
class MeshDecoder:
    hier: MeshHierarchy
    spirals: list  # tables, finest first
    cfg: DecoderConfig = field(default_factory=DecoderConfig)
    params: ParamStore = None
    seed: int = 1

    def __post_init__(self):
        if self.cfg.levels != len(self.hier):
            raise ValueError(f"decoder has {self.cfg.levels} levels, hierarchy {len(self.hier)}")
        for k, (t, m) in enumerate(zip(self.spirals, self.hier.levels)):
            if t.shape[0] != m.n_vertices:
                raise ValueError(f"spiral table {k} has {t.shape[0]} rows for {m.n_vertices} vertices")
        self.template = init_template(self.hier)
        self.seed_features = (self.template - self.hier.levels[0].vertices.mean(axis=0)) * TEMPLATE_FEATURE_SCALE
        self.up = [U.to_scipy() for U in self.hier.up]
        if self.params is None:
            self.params = ParamStore(self.seed)
            self._init()

    def input_width(self, k: int) -> int:
        prev = 3 if k == self.cfg.levels - 1 else self.cfg.widths[k + 1]
        return self.cfg.widths[k] + prev

    def _init(self):
        P, cfg = self.params, self.cfg
        for k in range(cfg.levels - 1, -1, -1):
            c, l = cfg.widths[k], self.spirals[k].shape[1]
            width_in = self.input_width(k)
            for j in range(cfg.blocks_per_level):
                P.weight(f"dec{k}.conv{j}.w", (l * width_in, c))
                P.bias(f"dec{k}.conv{j}.b", c)
                width_in = c
            if cfg.attention:
                for name in "qkvo":
                    P.weight(f"dec{k}.attn.{name}", (c, c))
                if cfg.attn_zero_out:
                    P[f"dec{k}.attn.o"].data[:] = 0.0
                if cfg.attn_norm == "pre":
                    P[f"dec{k}.attn.ln_g"] = Parameter(np.ones(c), f"dec{k}.attn.ln_g")
                    P.bias(f"dec{k}.attn.ln_b", c)
            P.weight(f"dec{k}.head.w", (c, 3))
            P.bias(f"dec{k}.head.b", 3)
            if cfg.mapping_mode == "global_mlp":
                n = self.hier.levels[k].n_vertices
                P.weight(f"dec{k}.map.w", (c, n * c), fan_in=c, fan_out=c)
                P.bias(f"dec{k}.map.b", n * c)

    def vertex_features(self, k, Q, V, cams, image_wh):
        cfg = self.cfg
        if cfg.mapping_mode == "pixel_aligned":
            return F.sample_vertex_features(Q, V, cams, image_wh, cfg.sample_grad_coords)
        g = F.global_avg_pool(Q)
        mlp = (self.params[f"dec{k}.map.w"], self.params[f"dec{k}.map.b"]) if cfg.mapping_mode == "global_mlp" else None
        return global_feature_mapping(g, cfg.mapping_mode, V.shape[-2], mlp)

    def mesh_conv_layer(self, k, X, V, Q, cams, image_wh):
        """One decoding level: map features, GCN blocks, attention, offsets."""
        P, cfg = self.params, self.cfg
        G = self.vertex_features(k, Q, V, cams, image_wh)
        H = concat([G, X], axis=-1)
        for j in range(cfg.blocks_per_level):
            H = relu(F.spiral_conv(H, self.spirals[k], P[f"dec{k}.conv{j}.w"], P[f"dec{k}.conv{j}.b"]))
        if cfg.attention:
            A = F.layer_norm(H, P[f"dec{k}.attn.ln_g"], P[f"dec{k}.attn.ln_b"]) if cfg.attn_norm == "pre" else H
            H = H + F.mhsa(A, *(P[f"dec{k}.attn.{n}"] for n in "qkvo"), heads=cfg.heads)
        delta = F.linear(H, P[f"dec{k}.head.w"], P[f"dec{k}.head.b"]) * cfg.offset_scale
        return H, delta

    def __call__(self, pyramid, cams, image_wh) -> DecodeResult:
        fused = pyramid.fused if hasattr(pyramid, "fused") else pyramid
        B = fused[0].shape[0]
        cams = np.asarray(cams, dtype=float).reshape(B, 4)
        dt = fused[0].dtype
        V = Tensor(np.broadcast_to(self.template, (B,) + self.template.shape).astype(dt))
        X = Tensor(np.broadcast_to(self.seed_features, (B,) + self.seed_features.shape).astype(dt))
        meshes, feats = [], []
        for k in range(self.cfg.levels - 1, -1, -1):
            X, delta = self.mesh_conv_layer(k, X, V, fused[k], cams, image_wh)
            V = V + delta
            meshes.append(V)
            feats.append(X)
            if k > 0:
                V = sparse_matmul(self.up[k - 1], V)
                X = sparse_matmul(self.up[k - 1], X)
        return DecodeResult(meshes, feats)


def decode(pyramid, hier, spirals, cams, params, cfg, image_wh) -> DecodeResult:
    return MeshDecoder(hier, spirals, cfg, params)(pyramid, cams, image_wh)


def template_chain(hier: MeshHierarchy) -> list[np.ndarray]:
    """The template propagated coarse -> fine by the up-sampling matrices."""
    V = init_template(hier)
    out = [V]
    for k in range(len(hier) - 1, 0, -1):
        V = hier.up[k - 1].to_scipy() @ V
        out.append(V)
    return out
