"""Hourglass feature extractor, 2D auxiliary heads, and 2D label rendering."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh
from .nn import functional as F
from .nn.params import ParamStore
from .nn.tensor import Tensor, as_tensor, relu
from .sampling import Camera, project

DESK_CHANNELS = (8, 16, 32, 64)  # finest -> coarsest
FULL_CHANNELS = (64, 128, 256, 512)


@dataclass
class EncoderConfig:
    channels: tuple = DESK_CHANNELS  # per pyramid level, finest first
    joints: int = 5
    in_channels: int = 3

    @property
    def levels(self) -> int:
        return len(self.channels)


@dataclass
class FeaturePyramid:
    down: list  # F_s, finest first
    up: list  # H_s, finest first
    fused: list  # Q_s, finest first


@dataclass
class AuxOutputs:
    silhouette: Tensor  # B x h x w x 1 logits
    pose: Tensor  # B x h x w x J logits


@dataclass
class Encoder:
    cfg: EncoderConfig = field(default_factory=EncoderConfig)
    params: ParamStore = None
    seed: int = 0

    def __post_init__(self):
        if self.params is None:
            self.params = ParamStore(self.seed)
            self._init()

    def _init(self):
        P, ch = self.params, self.cfg.channels
        P.weight("enc.stem.w", (3, 3, self.cfg.in_channels, ch[0]))
        P.bias("enc.stem.b", ch[0])
        prev = ch[0]
        for s, c in enumerate(ch):
            P.weight(f"enc.down{s}.w", (3, 3, prev, c))
            P.bias(f"enc.down{s}.b", c)
            prev = c
        top = len(ch) - 1
        P.weight(f"enc.up{top}.w", (3, 3, ch[top], ch[top]))
        P.bias(f"enc.up{top}.b", ch[top])
        for s in range(top - 1, -1, -1):
            P.weight(f"enc.up{s}.w", (3, 3, ch[s + 1], ch[s]))
            P.bias(f"enc.up{s}.b", ch[s])
        for s, c in enumerate(ch):
            P.weight(f"enc.fuse{s}.w", (2 * c, c))
            P.bias(f"enc.fuse{s}.b", c)
        P.weight("enc.sil.w", (ch[0], 1))
        P.bias("enc.sil.b", 1)
        P.weight("enc.pose.w", (ch[0], self.cfg.joints))
        P.bias("enc.pose.b", self.cfg.joints)

    def __call__(self, images):
        return encode(self.params, images, self.cfg)


def check_input_size(shape, levels: int) -> None:
    h, w = shape[-3], shape[-2]
    q = 2 ** (levels + 1)
    if h % q or w % q:
        raise ValueError(f"image {h}x{w} not divisible by {q}")


def encode(P: ParamStore, images, cfg: EncoderConfig) -> tuple[FeaturePyramid, AuxOutputs]:
    x = as_tensor(images)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    check_input_size(x.shape, cfg.levels)
    S = cfg.levels
    x = relu(F.conv2d(x, P["enc.stem.w"], P["enc.stem.b"], stride=2, pad=1))
    down = []
    for s in range(S):
        x = relu(F.conv2d(x, P[f"enc.down{s}.w"], P[f"enc.down{s}.b"], stride=2, pad=1))
        down.append(x)
    up = [None] * S
    up[S - 1] = relu(F.conv2d(down[S - 1], P[f"enc.up{S - 1}.w"], P[f"enc.up{S - 1}.b"], pad=1))
    for s in range(S - 2, -1, -1):
        y = F.conv2d(F.upsample2x(up[s + 1]), P[f"enc.up{s}.w"], P[f"enc.up{s}.b"], pad=1)
        up[s] = relu(y + down[s])
    fused = [F.conv1d_fuse(down[s], up[s], P[f"enc.fuse{s}.w"], P[f"enc.fuse{s}.b"]) for s in range(S)]
    aux = AuxOutputs(
        silhouette=F.linear(up[0], P["enc.sil.w"], P["enc.sil.b"]),
        pose=F.linear(up[0], P["enc.pose.w"], P["enc.pose.b"]),
    )
    return FeaturePyramid(down, up, fused), aux


# ---------------------------------------------------------------- 2D labels

def gaussian_heatmap(keypoints, sigma: float, size) -> np.ndarray:
    """Unnormalised Gaussians (h, w, J) peaking at 1 on each keypoint's nearest pixel.

    Keypoints are in map coordinates with pixel centres at integers (x, y).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = size
    kp = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    centre = np.floor(kp + 0.5)
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (xs[..., None] - centre[:, 0]) ** 2 + (ys[..., None] - centre[:, 1]) ** 2
    return np.exp(-0.5 * d2 / sigma**2)


def pixel_centres(cam: Camera, size) -> np.ndarray:
    """Image-plane coordinates (h, w, 2) of the centres of an h x w label grid."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([(xs + 0.5) * cam.W / w, (ys + 0.5) * cam.H / h], axis=-1)


def _edge(a, b, p):
    return (b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (p[..., 0] - a[..., 0])


def rasterize(mesh: TriMesh, cam: Camera, size, chunk: int = 256):
    """Per-pixel nearest covering face and its barycentrics.

    Returns (face index (h, w) with -1 for background, barycentrics (h, w, 3)).
    Depth is interpolated linearly in screen space.
    """
    h, w = size
    uv = project(cam, mesh.vertices)
    z = mesh.vertices[:, 2]
    pts = pixel_centres(cam, size).reshape(-1, 2)
    best_z = np.full(len(pts), np.inf)
    best_f = np.full(len(pts), -1, dtype=np.int64)
    best_b = np.zeros((len(pts), 3))
    faces = mesh.faces
    for start in range(0, len(faces), chunk):
        f = faces[start : start + chunk]
        a, b, c = uv[f[:, 0]], uv[f[:, 1]], uv[f[:, 2]]
        area = _edge(a, b, c)
        ok = np.abs(area) > 1e-12
        p = pts[:, None, :]
        w0 = _edge(b[None], c[None], p)
        w1 = _edge(c[None], a[None], p)
        w2 = _edge(a[None], b[None], p)
        sgn = np.sign(area)[None]
        inside = (w0 * sgn >= 0) & (w1 * sgn >= 0) & (w2 * sgn >= 0) & ok[None]
        safe = np.where(ok, area, 1.0)[None]
        l0, l1, l2 = w0 / safe, w1 / safe, w2 / safe
        depth = l0 * z[f[:, 0]][None] + l1 * z[f[:, 1]][None] + l2 * z[f[:, 2]][None]
        depth = np.where(inside, depth, np.inf)
        k = np.argmin(depth, axis=1)
        dk = depth[np.arange(len(pts)), k]
        better = dk < best_z
        best_z[better] = dk[better]
        best_f[better] = start + k[better]
        rows = np.flatnonzero(better)
        best_b[rows] = np.stack([l0[rows, k[rows]], l1[rows, k[rows]], l2[rows, k[rows]]], axis=1)
    return best_f.reshape(h, w), best_b.reshape(h, w, 3)


def rasterize_silhouette(mesh: TriMesh, cam: Camera, size) -> np.ndarray:
    face, _ = rasterize(mesh, cam, size)
    return (face >= 0).astype(np.float64)[..., None]


def render_colors(mesh: TriMesh, cam: Camera, size, vertex_colors) -> np.ndarray:
    """Z-buffered barycentric interpolation of per-vertex colours; background 0."""
    face, bary = rasterize(mesh, cam, size)
    cols = np.asarray(vertex_colors, dtype=float)
    img = np.zeros(tuple(size) + (cols.shape[1],))
    fg = face >= 0
    tri = mesh.faces[face[fg]]
    img[fg] = np.einsum("nk,nkc->nc", bary[fg], cols[tri])
    return img
