"""Reference meshes: platonic fixtures and the procedural 778-vertex hand template.

The hand template is a closed genus-0 surface built as a radial graph over a
sphere, so it is embedded and consistently oriented by construction. It
stands in for the licensed MANO topology (same vertex count).
"""
from __future__ import annotations

from importlib import resources

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriMesh, load_obj

HAND_TEMPLATE_FILE = "hand_template_778.obj"

# (in-plane direction [deg], angular half-width [rad], length in unit-sphere radii)
FINGERS = (
    (18.0, 0.16, 1.15),  # thumb
    (64.0, 0.12, 1.55),  # index
    (88.0, 0.12, 1.75),  # middle
    (111.0, 0.12, 1.55),  # ring
    (133.0, 0.11, 1.15),  # pinky
)
PALM_AXES = np.array([45.0, 50.0, 14.0])  # mm
FINGER_THICKNESS = 0.28  # elevation falloff of the finger bumps
TEMPLATE_DEPTH = 500.0  # mm, template centroid distance from the camera


def tetrahedron() -> TriMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosahedron() -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    return TriMesh(v / np.linalg.norm(v[0]), f)


def single_triangle() -> TriMesh:
    return TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))


def sphere_points(n: int) -> np.ndarray:
    """Fibonacci points with extra density near the z = 0 equator."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    z = z * (0.5 + 0.5 * z * z)
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - 5**0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def hull_mesh(points: np.ndarray) -> TriMesh:
    hull = ConvexHull(points)
    faces = hull.simplices.copy()
    # orient outward: positive signed volume w.r.t. the centroid
    c = points.mean(axis=0)
    a, b, d = (points[faces[:, k]] - c for k in range(3))
    flip = np.einsum("ij,ij->i", np.cross(a, b), d) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriMesh(points, faces)


def _angle_diff(a, b):
    return (a - b + np.pi) % (2 * np.pi) - np.pi


def finger_bumps(unit: np.ndarray) -> np.ndarray:
    """Per-finger radial bump heights for unit-sphere directions, shape (N, 5)."""
    phi = np.arctan2(unit[:, 1], unit[:, 0])
    elev = np.exp(-((unit[:, 2] / FINGER_THICKNESS) ** 2))
    out = np.empty((len(unit), len(FINGERS)))
    for k, (deg, width, length) in enumerate(FINGERS):
        d = _angle_diff(phi, np.deg2rad(deg))
        out[:, k] = length * np.exp(-((d / width) ** 2)) * elev
    return out


def hand_surface(unit: np.ndarray) -> np.ndarray:
    radial = 1.0 + finger_bumps(unit).sum(axis=1)
    return unit * radial[:, None] * PALM_AXES


def generate_hand_template(n: int = 778) -> TriMesh:
    """Closed, outward-oriented hand-like mesh with exactly ``n`` vertices,
    centred at (0, 0, TEMPLATE_DEPTH) in camera-frame millimetres."""
    unit = sphere_points(n)
    base = hull_mesh(unit)
    v = hand_surface(unit)
    v[:, 2] += TEMPLATE_DEPTH
    return TriMesh(v, base.faces)


def hand_template() -> TriMesh:
    """The shipped 778-vertex template (regenerable with generate_hand_template)."""
    ref = resources.files("c2fhand.data").joinpath(HAND_TEMPLATE_FILE)
    with resources.as_file(ref) as path:
        return load_obj(path)


def finger_membership(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Soft finger weights (N, 5) and progress along each finger (N, 5) in [0, 1].

    Works on any decimation of the template since it only inspects positions.
    """
    p = (vertices - np.array([0.0, 0.0, TEMPLATE_DEPTH])) / PALM_AXES
    r = np.linalg.norm(p, axis=1)
    unit = p / np.maximum(r, 1e-12)[:, None]
    phi = np.arctan2(unit[:, 1], unit[:, 0])
    weights = np.empty((len(vertices), len(FINGERS)))
    progress = np.empty_like(weights)
    for k, (deg, width, length) in enumerate(FINGERS):
        d = _angle_diff(phi, np.deg2rad(deg))
        weights[:, k] = np.exp(-((d / (1.5 * width)) ** 2))
        progress[:, k] = np.clip((r - 1.0) / length, 0.0, 1.0)
    return weights, progress


def landmark_vertices(vertices: np.ndarray) -> np.ndarray:
    """Index of the fingertip vertex of each finger (the farthest along it)."""
    weights, progress = finger_membership(vertices)
    return np.array([int(np.argmax(weights[:, k] * progress[:, k])) for k in range(len(FINGERS))])
