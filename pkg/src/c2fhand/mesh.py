"""Triangle meshes: OBJ IO, adjacency, edges and face normals."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class DegenerateFaceError(MeshError):
    def __init__(self, face_index: int):
        super().__init__(f"face {face_index} has zero area")
        self.face_index = face_index


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    non_manifold: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be N x 3, got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be F x 3, got {f.shape}")
        n = len(v)
        if len(f):
            if n < 3:
                raise MeshError("a mesh with faces needs at least 3 vertices")
            if f.min() < 0 or f.max() >= n:
                raise MeshError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face with repeated vertex")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "non_manifold", not _is_edge_manifold(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)


def _directed_edges(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def _is_edge_manifold(faces: np.ndarray) -> bool:
    """Every undirected edge in at most two faces, used once per direction."""
    if len(faces) == 0:
        return True
    d = _directed_edges(faces)
    if len(np.unique(d, axis=0)) != len(d):
        return False
    und = np.sort(d, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    return bool(counts.max() <= 2)


def is_closed(mesh: TriMesh) -> bool:
    d = _directed_edges(mesh.faces)
    fwd = {tuple(e) for e in d.tolist()}
    return all((b, a) in fwd for a, b in fwd)


def load_obj(path) -> TriMesh:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    verts, faces = [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MeshError(f"{path}:{lineno}: malformed vertex record")
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: malformed vertex record") from exc
        elif tag == "f":
            if len(rest) != 3:
                raise MeshError(f"{path}:{lineno}: only triangle faces are supported")
            try:
                idx = [int(tok.split("/")[0]) for tok in rest]
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: malformed face record") from exc
            if any(i < 1 for i in idx):
                raise MeshError(f"{path}:{lineno}: OBJ indices are 1-based")
            faces.append([i - 1 for i in idx])
        # vt / vn / g / o / s records are ignored
    if not verts:
        raise MeshError(f"{path}: no vertex records")
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and f.max() >= len(verts):
        raise MeshError(f"{path}: face index out of range")
    return TriMesh(np.asarray(verts), f)


def save_obj(mesh: TriMesh, path) -> None:
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise MeshError("refusing to write an empty mesh")
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def edge_list(mesh: TriMesh) -> np.ndarray:
    """Unique undirected edges (i < j), sorted lexicographically."""
    if mesh.n_faces == 0:
        return np.zeros((0, 2), dtype=np.int64)
    und = np.sort(_directed_edges(mesh.faces), axis=1)
    return np.unique(und, axis=0)


def vertex_adjacency(mesh: TriMesh) -> list[list[int]]:
    adj: list[set[int]] = [set() for _ in range(mesh.n_vertices)]
    for a, b in edge_list(mesh).tolist():
        adj[a].add(b)
        adj[b].add(a)
    return [sorted(s) for s in adj]


def face_normals(mesh: TriMesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(n, axis=1)
    # relative threshold keeps the check scale invariant
    scale = np.maximum(
        np.linalg.norm(v[f[:, 1]] - v[f[:, 0]], axis=1) * np.linalg.norm(v[f[:, 2]] - v[f[:, 0]], axis=1),
        np.finfo(float).tiny,
    )
    bad = np.flatnonzero(norm <= 1e-12 * scale)
    if len(bad):
        raise DegenerateFaceError(int(bad[0]))
    return n / norm[:, None]


def euler_characteristic(mesh: TriMesh) -> int:
    return mesh.n_vertices - len(edge_list(mesh)) + mesh.n_faces
