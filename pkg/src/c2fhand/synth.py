"""Procedural training data: articulated, similarity-transformed template
hands rendered through a per-sample pinhole camera.

A dataset lives in a directory: ``manifest.json`` plus per-sample TNSR
tensors and an OBJ of the finest ground-truth mesh for inspection.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .encoder import gaussian_heatmap, rasterize_silhouette, render_colors
from .hierarchy import MeshHierarchy, SparseMatrix, pool
from .mesh import TriMesh, save_obj
from .nn.tensorio import read_tensor, write_tensor
from .sampling import Camera, ProjectionError, project, to_grid
from .templates import FINGERS, finger_membership, landmark_vertices

FORMAT_VERSION = 1


@dataclass
class SynthConfig:
    image_size: int = 64
    map_size: int = 16  # aux head resolution (image / 4)
    focal: float = 128.0
    focal_jitter: float = 0.1
    centre_jitter: float = 2.0  # px
    bend_amplitude: float = 25.0  # mm, fingertip displacement at full bend
    spread_amplitude: float = 15.0  # mm, sideways fingertip displacement in the palm plane
    max_rotation: float = 25.0  # deg per axis
    scale_range: tuple = (0.9, 1.1)
    shift_xy: float = 15.0  # mm
    shift_z: float = 40.0  # mm
    heatmap_sigma: float = 2.0  # map pixels
    regressor_k: int = 4

    def to_json(self):
        d = dict(self.__dict__)
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "scale_range" in d:
            d["scale_range"] = tuple(d["scale_range"])
        return cls(**d)


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 in [0, 1]
    pose: np.ndarray  # h x w x J heatmaps
    silhouette: np.ndarray  # h x w x 1
    meshes: list  # gt vertices per level, finest first
    camera: Camera

    def coarse_to_fine(self) -> list:
        return self.meshes[::-1]


@dataclass
class SyntheticDataset:
    samples: list = field(default_factory=list)
    config: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def batch(self, idx):
        """Stacked arrays for the samples ``idx``."""
        ss = [self.samples[i] for i in idx]
        return {
            "images": np.stack([s.image for s in ss]),
            "pose": np.stack([s.pose for s in ss]),
            "silhouette": np.stack([s.silhouette for s in ss]),
            "meshes": [np.stack([s.meshes[k] for s in ss]) for k in range(len(ss[0].meshes))],
            "cams": np.stack([s.camera.as_array() for s in ss]),
        }


# ---------------------------------------------------------------- generation

def articulate(vertices: np.ndarray, bends: np.ndarray, amplitude: float,
               spreads=None, spread_amplitude: float = 0.0) -> np.ndarray:
    """Bend each finger towards the palm normal (z) and sideways within the
    palm plane, both with a quarter-sine profile along the finger."""
    w, prog = finger_membership(vertices)
    profile = w * np.sin(0.5 * np.pi * prog)
    out = np.array(vertices, dtype=float, copy=True)
    out[:, 2] += profile @ (np.asarray(bends) * amplitude)
    if spreads is not None and spread_amplitude:
        ang = np.deg2rad([f[0] for f in FINGERS])
        side = np.stack([-np.sin(ang), np.cos(ang)], axis=1)  # (5, 2) perpendicular to each finger
        out[:, :2] += (profile * (np.asarray(spreads) * spread_amplitude)) @ side
    return out


def similarity(vertices, rng, cfg: SynthConfig):
    centre = vertices.mean(axis=0)
    R = Rotation.from_euler("xyz", rng.uniform(-cfg.max_rotation, cfg.max_rotation, 3), degrees=True).as_matrix()
    s = rng.uniform(*cfg.scale_range)
    t = np.array([rng.uniform(-cfg.shift_xy, cfg.shift_xy), rng.uniform(-cfg.shift_xy, cfg.shift_xy),
                  rng.uniform(-cfg.shift_z, cfg.shift_z)])
    return (vertices - centre) @ R.T * s + centre + t


def draw_camera(rng, cfg: SynthConfig) -> Camera:
    f = cfg.focal * rng.uniform(1 - cfg.focal_jitter, 1 + cfg.focal_jitter)
    c = cfg.image_size / 2.0
    return Camera(f, f, c + rng.uniform(-cfg.centre_jitter, cfg.centre_jitter),
                  c + rng.uniform(-cfg.centre_jitter, cfg.centre_jitter), cfg.image_size, cfg.image_size)


def template_colors(vertices: np.ndarray) -> np.ndarray:
    """Fixed per-vertex RGB from normalised rest positions, so texture follows the surface."""
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    return 0.15 + 0.85 * (vertices - lo) / np.maximum(hi - lo, 1e-12)


def fingertip_regressor(vertices: np.ndarray, k: int = 4) -> SparseMatrix:
    """5 joints, each the mean of the k template vertices nearest its fingertip."""
    tips = landmark_vertices(vertices)
    rows, cols, vals = [], [], []
    for j, t in enumerate(tips):
        d = np.linalg.norm(vertices - vertices[t], axis=1)
        for c in np.argsort(d, kind="stable")[:k]:
            rows.append(j)
            cols.append(int(c))
            vals.append(1.0 / k)
    return SparseMatrix(len(tips), len(vertices), rows, cols, vals)


def _pool_chain(hier: MeshHierarchy, fine: np.ndarray) -> list:
    out = [fine]
    for D in hier.down:
        out.append(pool(D, out[-1]))
    return out


def make_sample(hier: MeshHierarchy, rng, cfg: SynthConfig, colors, tips) -> Sample:
    rest = hier.levels[0].vertices
    faces = hier.levels[0].faces
    for _ in range(100):
        bends = rng.uniform(-1.0, 1.0, 5)
        spreads = rng.uniform(-1.0, 1.0, 5)
        v = similarity(articulate(rest, bends, cfg.bend_amplitude, spreads, cfg.spread_amplitude), rng, cfg)
        cam = draw_camera(rng, cfg)
        try:
            uv = project(cam, v)
        except ProjectionError:
            continue
        if uv.min() >= 0 and uv.max() <= cfg.image_size:
            break
    else:
        raise RuntimeError("could not draw a camera that frames the hand")
    mesh = TriMesh(v, faces)
    hw = (cfg.map_size, cfg.map_size)
    image = render_colors(mesh, cam, (cfg.image_size, cfg.image_size), colors)
    sil = rasterize_silhouette(mesh, cam, hw)
    kp = to_grid(uv[tips], cam, hw)
    pose = gaussian_heatmap(kp, cfg.heatmap_sigma, hw)
    return Sample(image, pose, sil, _pool_chain(hier, v), cam)


def generate_synthetic(n: int, hier: MeshHierarchy, seed: int = 0, cfg: SynthConfig | None = None) -> SyntheticDataset:
    cfg = cfg or SynthConfig()
    if n < 0:
        raise ValueError("sample count must be non-negative")
    rng = np.random.default_rng(seed)
    rest = hier.levels[0].vertices
    colors = template_colors(rest)
    tips = landmark_vertices(rest)
    samples = [make_sample(hier, rng, cfg, colors, tips) for _ in range(n)]
    return SyntheticDataset(samples, cfg, seed)


# ---------------------------------------------------------------- storage

def save_dataset(ds: SyntheticDataset, directory, hier: MeshHierarchy | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(ds.samples):
        stem = f"{i:06d}"
        write_tensor(d / f"{stem}_image.tnsr", s.image)
        write_tensor(d / f"{stem}_pose.tnsr", s.pose)
        write_tensor(d / f"{stem}_sil.tnsr", s.silhouette)
        write_tensor(d / f"{stem}_mesh.tnsr", s.meshes[0])
        e = {"id": stem, "image": f"{stem}_image.tnsr", "pose": f"{stem}_pose.tnsr",
             "silhouette": f"{stem}_sil.tnsr", "mesh": f"{stem}_mesh.tnsr", "camera": s.camera.to_json()}
        if hier is not None:
            save_obj(TriMesh(s.meshes[0], hier.levels[0].faces), d / f"{stem}_gt.obj")
            e["obj"] = f"{stem}_gt.obj"
        entries.append(e)
    manifest = {"format": FORMAT_VERSION, "n": len(ds), "seed": ds.seed,
                "config": ds.config.to_json(), "levels": [len(m) for m in ds.samples[0].meshes] if ds.samples else [],
                "samples": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory, hier: MeshHierarchy) -> SyntheticDataset:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported dataset format {manifest.get('format')}")
    samples = []
    for e in manifest["samples"]:
        fine = read_tensor(d / e["mesh"])
        if fine.shape[0] != hier.levels[0].n_vertices:
            raise ValueError(f"sample {e['id']}: {fine.shape[0]} vertices, hierarchy expects {hier.levels[0].n_vertices}")
        samples.append(Sample(read_tensor(d / e["image"]), read_tensor(d / e["pose"]),
                              read_tensor(d / e["silhouette"]), _pool_chain(hier, fine),
                              Camera.from_json(e["camera"])))
    return SyntheticDataset(samples, SynthConfig.from_json(manifest["config"]), manifest.get("seed", 0))


def depth_ok(ds: SyntheticDataset) -> bool:
    return all(np.all(m[:, 2] > 0) for s in ds.samples for m in s.meshes)

