"""Pinhole projection and bilinear pixel-aligned feature sampling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

Z_MIN = 1e-6


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    W: int
    H: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.W < 1 or self.H < 1:
            raise ValueError("image size must be at least 1x1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["W"]), int(d["H"]))

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)


@dataclass
class FeatureMap:
    data: np.ndarray  # h x w x c
    level: int = 0

    @property
    def hw(self):
        return self.data.shape[:2]


def project(cam: Camera, V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    z = V[..., 2]
    if np.any(z <= Z_MIN):
        raise ProjectionError("point at or behind the camera plane")
    return np.stack([cam.fx * V[..., 0] / z + cam.cx, cam.fy * V[..., 1] / z + cam.cy], axis=-1)


def to_grid(uv, cam: Camera, hw) -> np.ndarray:
    """Image pixel coordinates to feature-map coordinates (pixel centres at integers)."""
    h, w = hw
    uv = np.asarray(uv, dtype=float)
    return np.stack([uv[..., 0] * w / cam.W - 0.5, uv[..., 1] * h / cam.H - 0.5], axis=-1)


def bilinear_setup(grid, h: int, w: int):
    """Corner indices, blend weights and in-range masks for replicate-padded sampling.

    grid: (..., 2) with x in column units and y in row units.
    """
    gx, gy = grid[..., 0], grid[..., 1]
    cx = np.clip(gx, 0.0, w - 1.0)
    cy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(cx), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(cy), max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = cx - x0
    ay = cy - y0
    # clamped coordinates carry no gradient
    mx = ((gx > 0.0) & (gx < w - 1.0)).astype(float)
    my = ((gy > 0.0) & (gy < h - 1.0)).astype(float)
    return x0, x1, y0, y1, ax, ay, mx, my


def bilinear_sample(fmap, grid) -> np.ndarray:
    """Sample an (h, w, c) map at (N, 2) continuous coordinates."""
    data = fmap.data if isinstance(fmap, FeatureMap) else np.asarray(fmap)
    h, w = data.shape[:2]
    grid = np.asarray(grid, dtype=float)
    x0, x1, y0, y1, ax, ay, _, _ = bilinear_setup(grid, h, w)
    ax, ay = ax[..., None], ay[..., None]
    top = (1 - ax) * data[y0, x0] + ax * data[y0, x1]
    bot = (1 - ax) * data[y1, x0] + ax * data[y1, x1]
    return (1 - ay) * top + ay * bot


def map_vertex_features(fmap, mesh_vertices, cam: Camera) -> np.ndarray:
    data = fmap.data if isinstance(fmap, FeatureMap) else np.asarray(fmap)
    uv = project(cam, mesh_vertices)
    return bilinear_sample(data, to_grid(uv, cam, data.shape[:2]))
