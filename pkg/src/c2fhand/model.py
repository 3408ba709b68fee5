"""Encoder + decoder bundle, preset hierarchies and the per-batch loss."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .decoder import DecoderConfig, MeshDecoder
from .encoder import DESK_CHANNELS, FULL_CHANNELS, Encoder, EncoderConfig
from .hierarchy import MeshHierarchy, build_hierarchy, simplify_quadric
from .nn.params import ParamStore
from .objectives import (
    LossWeights,
    bce_heatmap,
    edge_loss,
    gt_face_normals,
    mesh_l1,
    normal_loss,
    total_loss,
)
from .spiral import precompute_spirals
from .templates import hand_template

FULL_TARGETS = (778, 389, 195, 98)
DESK_TARGETS = (96, 48, 24, 12)


def preset_hierarchy(name: str) -> MeshHierarchy:
    """``full``: the 778-vertex template chain; ``desk``: a 96-vertex decimation of it."""
    mesh = hand_template()
    if name == "full":
        return build_hierarchy(mesh, targets=list(FULL_TARGETS))
    if name == "desk":
        coarse, _, _ = simplify_quadric(mesh, DESK_TARGETS[0])
        return build_hierarchy(coarse, targets=list(DESK_TARGETS))
    raise ValueError(f"unknown hierarchy preset {name!r}")


def preset_channels(name: str) -> tuple:
    return {"full": FULL_CHANNELS, "desk": DESK_CHANNELS}[name]


def topology_key(hier: MeshHierarchy) -> str:
    h = hashlib.sha256()
    for m in hier.levels:
        h.update(np.ascontiguousarray(m.faces, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


@dataclass
class HandModel:
    hier: MeshHierarchy
    spirals: list
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    seed: int = 0

    def __post_init__(self):
        if tuple(self.enc_cfg.channels) != tuple(self.dec_cfg.widths) and self.dec_cfg.mapping_mode == "pixel_aligned":
            raise ValueError("decoder widths must match encoder channels for pixel-aligned mapping")
        self.params = ParamStore(self.seed)
        self.encoder = Encoder(self.enc_cfg, params=self.params)
        self.encoder._init()
        self.decoder = MeshDecoder(self.hier, self.spirals, self.dec_cfg, params=self.params)
        self.decoder._init()
        self.faces = self.hier.levels[0].faces

    @classmethod
    def build(cls, hier, enc_cfg, dec_cfg, seed=0):
        spirals = precompute_spirals(hier, list(dec_cfg.spiral_lengths))
        return cls(hier, spirals, enc_cfg, dec_cfg, seed)

    def forward(self, images, cams):
        pyramid, aux = self.encoder(images)
        decoded = self.decoder(pyramid, cams, (images.shape[2], images.shape[1]))
        return decoded, aux

    def losses(self, batch, weights: LossWeights):
        decoded, aux = self.forward(batch["images"], batch["cams"])
        gt_c2f = batch["meshes"][::-1]
        fine = batch["meshes"][0]
        parts = {
            "mesh": mesh_l1(decoded.meshes, gt_c2f, weights.lambda_m, weights.mesh_reduction),
            "edge": edge_loss(decoded.finest, fine, self.faces),
            "norm": normal_loss(decoded.finest, gt_face_normals(fine, self.faces, allow_degenerate=True), self.faces,
                                degenerate="ignore"),
            "sil": bce_heatmap(aux.silhouette, batch["silhouette"]),
            "pose": bce_heatmap(aux.pose, batch["pose"]),
        }
        return total_loss(parts, weights), parts, decoded
