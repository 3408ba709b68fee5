"""Coarse-to-fine mesh hierarchy via quadric-error half-edge contraction.

Each contraction keeps one endpoint of the edge, so the down-sampling matrix
is a pure vertex selection and coarse meshes are sub-samples of the fine one.
Discarded vertices are re-expressed in barycentric coordinates of their
closest coarse face, which gives the up-sampling matrix.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, TriMesh, is_closed

SINGULAR_DET = 1e-12


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class SparseMatrix:
    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.row_idx, dtype=np.int64)
        c = np.asarray(self.col_idx, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64)
        if not (len(r) == len(c) == len(v)):
            raise ValueError("triplet arrays differ in length")
        if len(r) and (r.min() < 0 or r.max() >= self.rows or c.min() < 0 or c.max() >= self.cols):
            raise ValueError("triplet index out of bounds")
        if len(np.unique(r * self.cols + c)) != len(r):
            raise ValueError("duplicate (row, col) triplet")
        for name, arr in (("row_idx", r), ("col_idx", c), ("values", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triplets(cls, rows, cols, triplets):
        t = np.asarray(triplets, dtype=np.float64).reshape(-1, 3)
        return cls(rows, cols, t[:, 0].astype(np.int64), t[:, 1].astype(np.int64), t[:, 2])

    @classmethod
    def identity(cls, n):
        i = np.arange(n)
        return cls(n, n, i, i, np.ones(n))

    @property
    def shape(self):
        return (self.rows, self.cols)

    def triplets(self) -> list[list]:
        return [[int(r), int(c), float(v)] for r, c, v in zip(self.row_idx, self.col_idx, self.values)]

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.row_idx, self.col_idx)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_idx, self.col_idx] = self.values
        return out


@dataclass(frozen=True)
class MeshHierarchy:
    levels: tuple[TriMesh, ...]  # finest first
    down: tuple[SparseMatrix, ...]  # coarse x fine
    up: tuple[SparseMatrix, ...]  # fine x coarse

    @property
    def counts(self) -> list[int]:
        return [m.n_vertices for m in self.levels]

    def __len__(self):
        return len(self.levels)


def pool(D: SparseMatrix, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[0] != D.cols:
        raise ValueError(f"pool: matrix has {D.cols} columns, input has {X.shape[0]} rows")
    return D.to_scipy() @ X


def unpool(U: SparseMatrix, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[0] != U.cols:
        raise ValueError(f"unpool: matrix has {U.cols} columns, input has {X.shape[0]} rows")
    return U.to_scipy() @ X


# ---------------------------------------------------------------- quadrics

def _face_planes(v, faces):
    n = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = -np.einsum("ij,ij->i", n, v[faces[:, 0]])
    return np.concatenate([n, d[:, None]], axis=1)


def vertex_quadrics(mesh: TriMesh) -> np.ndarray:
    planes = _face_planes(mesh.vertices, mesh.faces)
    K = np.einsum("fi,fj->fij", planes, planes)
    Q = np.zeros((mesh.n_vertices, 4, 4))
    for k in range(3):
        np.add.at(Q, mesh.faces[:, k], K)
    return Q


def _quadric_error(Q, x):
    h = np.append(x, 1.0)
    return float(h @ Q @ h)


def _optimal_point(Q, a, b):
    A = Q[:3, :3]
    if abs(np.linalg.det(A)) < SINGULAR_DET:
        return 0.5 * (a + b)
    return np.linalg.solve(A, -Q[:3, 3])


# ---------------------------------------------------------------- contraction

class _Decimator:
    def __init__(self, mesh: TriMesh):
        self.v = mesh.vertices
        self.faces = [list(f) for f in mesh.faces.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.vfaces = [set() for _ in range(mesh.n_vertices)]
        for fi, f in enumerate(self.faces):
            for x in f:
                self.vfaces[x].add(fi)
        self.keys = {tuple(sorted(f)) for f in self.faces}
        self.alive = np.ones(mesh.n_vertices, dtype=bool)
        self.Q = vertex_quadrics(mesh)
        self.version = [0] * mesh.n_vertices
        self.heap: list = []
        self.n_alive = mesh.n_vertices
        for a, b in self._all_edges():
            self._push(a, b)

    def _all_edges(self):
        edges = set()
        for fi, f in enumerate(self.faces):
            if self.face_alive[fi]:
                for k in range(3):
                    a, b = f[k], f[(k + 1) % 3]
                    edges.add((min(a, b), max(a, b)))
        return sorted(edges)

    def neighbors(self, x):
        out = set()
        for fi in self.vfaces[x]:
            out.update(self.faces[fi])
        out.discard(x)
        return out

    def _edge_faces(self, a, b):
        return [fi for fi in self.vfaces[a] if b in self.faces[fi]]

    def _is_boundary_vertex(self, x):
        count = {}
        for fi in self.vfaces[x]:
            for y in self.faces[fi]:
                if y != x:
                    count[y] = count.get(y, 0) + 1
        return any(c == 1 for c in count.values())

    def _push(self, a, b):
        Q = self.Q[a] + self.Q[b]
        x = _optimal_point(Q, self.v[a], self.v[b])
        cost = max(_quadric_error(Q, x), 0.0)
        heapq.heappush(self.heap, (cost, a, b, self.version[a], self.version[b]))

    def _survivor(self, a, b):
        Q = self.Q[a] + self.Q[b]
        ea, eb = _quadric_error(Q, self.v[a]), _quadric_error(Q, self.v[b])
        return (a, b) if ea <= eb else (b, a)  # (kept, removed); a < b on ties

    def _legal(self, keep, drop):
        shared = self._edge_faces(keep, drop)
        if not shared or len(shared) > 2:
            return False
        opposite = {x for fi in shared for x in self.faces[fi]} - {keep, drop}
        if self.neighbors(keep) & self.neighbors(drop) != opposite:
            return False
        if len(shared) == 2 and self._is_boundary_vertex(keep) and self._is_boundary_vertex(drop):
            return False
        p = self.v[keep]
        for fi in self.vfaces[drop]:
            if fi in shared:
                continue
            f = self.faces[fi]
            g = [keep if x == drop else x for x in f]
            if tuple(sorted(g)) in self.keys:
                return False
            old = np.cross(self.v[f[1]] - self.v[f[0]], self.v[f[2]] - self.v[f[0]])
            pts = [p if x == drop else self.v[x] for x in f]
            new = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            if np.dot(old, new) <= 1e-12 * np.dot(old, old):
                return False
        return True

    def _collapse(self, keep, drop):
        for fi in self._edge_faces(keep, drop):
            self.face_alive[fi] = False
            self.keys.discard(tuple(sorted(self.faces[fi])))
            for x in self.faces[fi]:
                self.vfaces[x].discard(fi)
        for fi in list(self.vfaces[drop]):
            f = self.faces[fi]
            self.keys.discard(tuple(sorted(f)))
            f[f.index(drop)] = keep
            self.keys.add(tuple(sorted(f)))
            self.vfaces[keep].add(fi)
        self.vfaces[drop] = set()
        self.alive[drop] = False
        self.n_alive -= 1
        self.Q[keep] = self.Q[keep] + self.Q[drop]
        self.version[keep] += 1
        self.version[drop] += 1
        for y in sorted(self.neighbors(keep)):
            self._push(min(keep, y), max(keep, y))

    def run(self, target):
        deferred = []
        while self.n_alive > target:
            if not self.heap:
                raise HierarchyError(
                    f"target {target} below the minimum reachable by legal contractions "
                    f"(stuck at {self.n_alive} vertices)"
                )
            cost, a, b, va, vb = heapq.heappop(self.heap)
            if va != self.version[a] or vb != self.version[b] or not (self.alive[a] and self.alive[b]):
                continue
            keep, drop = self._survivor(a, b)
            if not self._legal(keep, drop):
                deferred.append((cost, a, b, va, vb))
                continue
            self._collapse(keep, drop)
            # neighbourhoods changed: previously illegal edges may now be legal
            for item in deferred:
                heapq.heappush(self.heap, item)
            deferred = []


def _closest_point_barycentric(p, a, b, c):
    """Barycentric weights (F, 3) of the closest point on each triangle to p.

    Region-based closest point on triangle; all weights end up in [0, 1].
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    n = len(a)
    w = np.full((n, 3), np.nan)
    done = np.zeros(n, dtype=bool)

    def assign(mask, wa, wb, wc):
        m = mask & ~done
        w[m, 0], w[m, 1], w[m, 2] = wa[m], wb[m], wc[m]
        done[m] = True

    zero, one = np.zeros(n), np.ones(n)
    assign((d1 <= 0) & (d2 <= 0), one, zero, zero)
    assign((d3 >= 0) & (d5 <= d3), zero, one, zero)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1 - t, t, zero)
        assign((d6 >= 0) & (d5 <= d6), zero, zero, one)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1 - t, zero, t)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), zero, 1 - t, t)
        denom = 1.0 / (va + vb + vc)
        bw, cw = vb * denom, vc * denom
        assign(np.ones(n, dtype=bool), 1 - bw - cw, bw, cw)
    return w


def upsample_weights(fine: TriMesh, coarse: TriMesh, survivors: np.ndarray) -> SparseMatrix:
    rows, cols, vals = [], [], []
    coarse_of = {int(f): c for c, f in enumerate(survivors)}
    cv, cf = coarse.vertices, coarse.faces
    A, B, C = cv[cf[:, 0]], cv[cf[:, 1]], cv[cf[:, 2]]
    for i in range(fine.n_vertices):
        if i in coarse_of:
            rows.append(i), cols.append(coarse_of[i]), vals.append(1.0)
            continue
        p = np.broadcast_to(fine.vertices[i], A.shape)
        w = _closest_point_barycentric(p, A, B, C)
        q = w[:, :1] * A + w[:, 1:2] * B + w[:, 2:] * C
        best = int(np.argmin(np.sum((q - p) ** 2, axis=1)))
        wt = np.clip(w[best], 0.0, 1.0)
        wt = wt / wt.sum()
        merged: dict[int, float] = {}
        for k in range(3):
            if wt[k] > 0:
                merged[int(cf[best, k])] = merged.get(int(cf[best, k]), 0.0) + float(wt[k])
        for c, val in sorted(merged.items()):
            rows.append(i), cols.append(c), vals.append(val)
    return SparseMatrix(fine.n_vertices, coarse.n_vertices, rows, cols, vals)


def simplify_quadric(mesh: TriMesh, target: int) -> tuple[TriMesh, SparseMatrix, SparseMatrix]:
    n = mesh.n_vertices
    if mesh.non_manifold:
        raise HierarchyError("mesh is not manifold")
    if target > n:
        raise HierarchyError(f"target {target} exceeds vertex count {n}")
    if target < 3:
        raise HierarchyError(f"target {target} below the minimum of 3 vertices")
    if target == n:
        return mesh, SparseMatrix.identity(n), SparseMatrix.identity(n)
    dec = _Decimator(mesh)
    dec.run(target)
    survivors = np.flatnonzero(dec.alive)
    remap = -np.ones(n, dtype=np.int64)
    remap[survivors] = np.arange(len(survivors))
    faces = np.array([f for f, ok in zip(dec.faces, dec.face_alive) if ok], dtype=np.int64)
    coarse = TriMesh(mesh.vertices[survivors], remap[faces])
    if coarse.non_manifold or (is_closed(mesh) and not is_closed(coarse)):
        raise MeshError("decimation broke manifoldness")  # guarded by _legal; should not happen
    D = SparseMatrix(len(survivors), n, np.arange(len(survivors)), survivors, np.ones(len(survivors)))
    U = upsample_weights(mesh, coarse, survivors)
    return coarse, D, U


def default_targets(n: int, levels: int, factor: float) -> list[int]:
    return [math.ceil(n / factor**k) for k in range(levels)]


def build_hierarchy(mesh: TriMesh, levels: int = 4, factor: float = 2.0, targets=None) -> MeshHierarchy:
    if targets is None:
        if levels < 2:
            raise HierarchyError("need at least two levels")
        if factor <= 1:
            raise HierarchyError("factor must exceed 1")
        targets = default_targets(mesh.n_vertices, levels, factor)
    targets = [int(t) for t in targets]
    if targets[0] != mesh.n_vertices:
        targets = [mesh.n_vertices] + targets
    if len(targets) < 2:
        raise HierarchyError("need at least two levels")
    if any(b >= a for a, b in zip(targets, targets[1:])):
        raise HierarchyError(f"targets must strictly decrease: {targets}")
    meshes, down, up = [mesh], [], []
    for t in targets[1:]:
        coarse, D, U = simplify_quadric(meshes[-1], t)
        meshes.append(coarse)
        down.append(D)
        up.append(U)
    return MeshHierarchy(tuple(meshes), tuple(down), tuple(up))


# ---------------------------------------------------------------- JSON

def hierarchy_to_json(h: MeshHierarchy) -> dict:
    return {
        "levels": [
            {"n_vertices": m.n_vertices, "faces": m.faces.tolist(), "vertices": m.vertices.tolist()}
            for m in h.levels
        ],
        "down": [D.triplets() for D in h.down],
        "up": [U.triplets() for U in h.up],
    }


def hierarchy_from_json(obj: dict) -> MeshHierarchy:
    levels = []
    for lv in obj["levels"]:
        n = lv["n_vertices"]
        verts = np.asarray(lv.get("vertices", np.zeros((n, 3))), dtype=float).reshape(n, 3)
        levels.append(TriMesh(verts, np.asarray(lv["faces"], dtype=np.int64).reshape(-1, 3)))
    counts = [m.n_vertices for m in levels]
    down = tuple(SparseMatrix.from_triplets(counts[k + 1], counts[k], t) for k, t in enumerate(obj["down"]))
    up = tuple(SparseMatrix.from_triplets(counts[k], counts[k + 1], t) for k, t in enumerate(obj["up"]))
    return MeshHierarchy(tuple(levels), down, up)


def save_hierarchy(h: MeshHierarchy, path) -> None:
    Path(path).write_text(json.dumps(hierarchy_to_json(h)))


def load_hierarchy(path) -> MeshHierarchy:
    return hierarchy_from_json(json.loads(Path(path).read_text()))
