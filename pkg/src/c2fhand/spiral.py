"""Fixed-length spiral orderings of k-disks on triangle meshes."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .hierarchy import MeshHierarchy
from .mesh import TriMesh, vertex_adjacency

DEFAULT_LENGTH = 27
PAD = -1


class SpiralError(ValueError):
    pass


def k_ring(adj, v: int, k: int) -> set[int]:
    """Vertices at BFS distance exactly k from v."""
    if not 0 <= v < len(adj):
        raise SpiralError(f"invalid vertex {v}")
    if k < 0:
        raise SpiralError("ring index must be non-negative")
    disk = {v}
    ring = {v}
    for _ in range(k):
        ring = {u for x in ring for u in adj[x]} - disk
        disk |= ring
        if not ring:
            break
    return ring


def k_disk(adj, v: int, k: int) -> set[int]:
    out = set()
    for i in range(k + 1):
        out |= k_ring(adj, v, i)
    return out


def bfs_distances(adj, v: int) -> dict[int, int]:
    dist = {v: 0}
    frontier = [v]
    while frontier:
        nxt = []
        for x in frontier:
            for u in adj[x]:
                if u not in dist:
                    dist[u] = dist[x] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


class _Orientation:
    """Half-edge successor lookups from face winding."""

    def __init__(self, mesh: TriMesh):
        self.vfaces: list[list[tuple[int, int, int]]] = [[] for _ in range(mesh.n_vertices)]
        self.halfedges: dict[tuple[int, int], int] = {}
        self.face_of: dict[tuple[int, int], int] = {}
        self.faces = mesh.faces.tolist()
        for fid, (a, b, c) in enumerate(self.faces):
            for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
                self.vfaces[x].append((x, y, z))
                self.halfedges[(x, y)] = z
                self.face_of[(x, y)] = fid

    def after(self, center: int, u: int):
        """Vertex following u around center, from face (center, u, next)."""
        return self.halfedges.get((center, u))

    def before(self, center: int, u: int):
        """Vertex preceding u around center, from face (center, prev, u)."""
        for _, y, z in self.vfaces[center]:
            if z == u:
                return y
        return None


def _one_ring(orient: _Orientation, adj, v: int) -> list[int]:
    nbrs = adj[v]
    if not nbrs:
        return []
    start = nbrs[0]
    # open fan: begin at the neighbour with no predecessor so the walk spans it
    if orient.before(v, start) is None or orient.after(v, start) is None:
        heads = [u for u in nbrs if orient.before(v, u) is None and orient.after(v, u) is not None]
        if heads:
            start = heads[0]
    ring = [start]
    seen = {start}
    cur = start
    while True:
        nxt = orient.after(v, cur)
        if nxt is None or nxt in seen:
            break
        ring.append(nxt)
        seen.add(nxt)
        cur = nxt
    # anything left (non-manifold fan) in index order
    ring += [u for u in nbrs if u not in seen]
    return ring


SEARCH_BUDGET = 20000


def _ring_successors(faces_by_vertex, orient, disk, ring_set):
    # boundary half-edges of the closed star of the disk, oriented by face winding
    star = set()
    for d in disk:
        star.update(faces_by_vertex[d])
    succ: dict[int, list[int]] = {}
    for fid in star:
        a, b, c = orient.faces[fid]
        for x, y in ((a, b), (b, c), (c, a)):
            if x in ring_set and y in ring_set and orient.face_of.get((y, x)) not in star:
                succ.setdefault(x, []).append(y)
    return succ


def _next_ring(faces_by_vertex, orient, adj, disk: set[int], ring_set: set[int], prev_last: int, need: int) -> list[int]:
    """Order a ring as an edge-connected walk covering its first ``need`` slots.

    Depth-first search preferring the orientation successor; the start is a
    ring vertex adjacent to the previous ring's last entry.
    """
    succ = _ring_successors(faces_by_vertex, orient, disk, ring_set)
    need = min(need, len(ring_set))

    def options(cur, seen):
        pref = sorted(y for y in succ.get(cur, []) if y not in seen)
        rest = [y for y in adj[cur] if y in ring_set and y not in seen and y not in pref]
        return pref + rest

    budget = [SEARCH_BUDGET]

    def search(path, seen):
        if len(path) >= need:
            return True
        budget[0] -= 1
        if budget[0] < 0:
            return False
        for y in options(path[-1], seen):
            path.append(y)
            seen.add(y)
            if search(path, seen):
                return True
            path.pop()
            seen.discard(y)
        return False

    starts = [u for u in adj[prev_last] if u in ring_set] or sorted(ring_set)
    path = None
    for s0 in starts:
        trial = [s0]
        if search(trial, {s0}):
            path = trial
            break
    if path is None:
        # no edge-connected ordering exists: deterministic greedy fallback
        path = [starts[0]]
        while len(path) < need:
            opts = options(path[-1], set(path))
            path.append(opts[0] if opts else min(ring_set - set(path)))
    seen = set(path)
    return path + sorted(ring_set - seen)


def _faces_by_vertex(mesh: TriMesh):
    out = [[] for _ in range(mesh.n_vertices)]
    for fid, f in enumerate(mesh.faces.tolist()):
        for x in f:
            out[x].append(fid)
    return out


class _SpiralBuilder:
    def __init__(self, mesh: TriMesh, adj=None):
        self.mesh = mesh
        self.adj = adj if adj is not None else vertex_adjacency(mesh)
        self.orient = _Orientation(mesh)
        self.fbv = _faces_by_vertex(mesh)

    def sequence(self, v: int, length: int) -> list[int]:
        if length < 1:
            raise SpiralError("spiral length must be at least 1")
        if not 0 <= v < self.mesh.n_vertices:
            raise SpiralError(f"invalid vertex {v}")
        out = [v]
        if length == 1:
            return out
        ring = _one_ring(self.orient, self.adj, v)
        if not ring:
            raise SpiralError(f"vertex {v} is isolated")
        disk = {v}
        while ring and len(out) < length:
            out.extend(ring)
            disk.update(ring)
            ring_set = {u for x in ring for u in self.adj[x]} - disk
            if not ring_set or len(out) >= length:
                break
            ring = _next_ring(self.fbv, self.orient, self.adj, disk, ring_set, out[-1], length - len(out))
        out = out[:length]
        return out + [PAD] * (length - len(out))


def spiral_sequence(mesh: TriMesh, adj, v: int, length: int) -> list[int]:
    return _SpiralBuilder(mesh, adj).sequence(v, length)


def spiral_table(mesh: TriMesh, length: int = DEFAULT_LENGTH) -> np.ndarray:
    b = _SpiralBuilder(mesh)
    return np.array([b.sequence(v, length) for v in range(mesh.n_vertices)], dtype=np.int64).reshape(
        mesh.n_vertices, length
    )


def precompute_spirals(hier: MeshHierarchy, lengths=DEFAULT_LENGTH) -> list[np.ndarray]:
    if np.isscalar(lengths):
        lengths = [int(lengths)] * len(hier)
    if len(lengths) != len(hier):
        raise SpiralError(f"{len(lengths)} spiral lengths for {len(hier)} levels")
    return [spiral_table(m, l) for m, l in zip(hier.levels, lengths)]


def check_spiral_row(adj, row) -> list[str]:
    """Invariant violations for one spiral row (empty list when valid)."""
    problems = []
    row = list(row)
    v = row[0]
    real = [x for x in row if x != PAD]
    if any(x == PAD for x in row[: len(real)]):
        problems.append("padding is not a contiguous suffix")
    if len(set(real)) != len(real):
        problems.append("repeated vertex")
    if any(not 0 <= x < len(adj) for x in real):
        problems.append("index out of range")
        return problems
    dist = bfs_distances(adj, v)
    rings = [dist.get(x, -1) for x in real]
    if rings[0] != 0:
        problems.append("row does not start at its centre")
    if any(b < a for a, b in zip(rings, rings[1:])):
        problems.append("ring index decreases")
    for i in range(1, len(real) - 1):
        if rings[i] == rings[i + 1] and real[i + 1] not in adj[real[i]]:
            problems.append(f"entries {i},{i + 1} in ring {rings[i]} are not adjacent")
    kmax = max(rings)
    disk = {x for x, d in dist.items() if d <= kmax}
    if not set(real) <= disk:
        problems.append("entry outside the k-disk")
    if len(real) < len(row) and set(real) != {x for x in dist}:
        # padded rows must have exhausted the reachable vertices
        problems.append("padded before the disk was exhausted")
    return problems


def spirals_to_json(tables) -> dict:
    return {"levels": [{"l": int(t.shape[1]), "rows": t.tolist()} for t in tables]}


def spirals_from_json(obj) -> list[np.ndarray]:
    return [np.asarray(lv["rows"], dtype=np.int64).reshape(-1, lv["l"]) for lv in obj["levels"]]


def save_spirals(tables, path) -> None:
    Path(path).write_text(json.dumps(spirals_to_json(tables)))


def load_spirals(path) -> list[np.ndarray]:
    return spirals_from_json(json.loads(Path(path).read_text()))
