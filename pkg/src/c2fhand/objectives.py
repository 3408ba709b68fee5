"""Training losses and evaluation metrics.

Losses are means over their natural elements (vertex coordinates, face
edges, pixels) so the weights stay resolution independent.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, face_normals
from .nn.tensor import Tensor, as_tensor, bce_with_logits, sqrt, tabs, tsum

DEFAULT_LAMBDA_M = (0.25, 0.25, 0.5, 1.0)  # coarse -> fine


@dataclass
class LossWeights:
    lambda_m: tuple = DEFAULT_LAMBDA_M
    lambda_n: float = 0.1
    lambda_p: float = 10.0
    lambda_s: float = 2.5
    mesh_reduction: str = "mean"  # or "sum" over coordinates

    def __post_init__(self):
        if min(self.lambda_m) < 0 or min(self.lambda_n, self.lambda_p, self.lambda_s) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mesh_reduction not in ("mean", "sum"):
            raise ValueError("mesh_reduction is 'mean' or 'sum'")

    def to_json(self):
        d = asdict(self)
        d["lambda_m"] = list(self.lambda_m)
        return d


# ---------------------------------------------------------------- losses

def mesh_l1(pred, gt, lambda_m=DEFAULT_LAMBDA_M, reduction: str = "mean") -> Tensor:
    """Weighted per-level L1 between predicted and ground-truth vertex arrays."""
    if not (len(pred) == len(gt) == len(lambda_m)):
        raise ValueError("mesh_l1: per-level lists differ in length")
    total = None
    for p, g, lam in zip(pred, gt, lambda_m):
        p = as_tensor(p)
        g = np.asarray(g.data if isinstance(g, Tensor) else g)
        if p.shape != g.shape:
            raise ValueError(f"mesh_l1: vertex count mismatch {p.shape} vs {g.shape}")
        d = tabs(p - g)
        term = d.mean() if reduction == "mean" else d.sum() * (1.0 / max(1, int(np.prod(p.shape[:-2]))))
        term = term * float(lam)
        total = term if total is None else total + term
    return total


def _face_edges(V, faces):
    """(…, 3F, 3) edge vectors b - a for every directed face edge."""
    f = np.asarray(faces)
    src = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    dst = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    return V[..., dst, :] - V[..., src, :]


def _check_topology(pred_faces, gt_faces):
    if pred_faces is not None and gt_faces is not None and not np.array_equal(pred_faces, gt_faces):
        raise ValueError("prediction and ground truth have different topology")


EDGE_EPS2 = 1e-18  # mm^2; keeps |e| differentiable at zero length


def _lengths(E):
    return sqrt(tsum(E * E, axis=-1) + EDGE_EPS2)


def edge_loss(pred, gt, faces, gt_faces=None) -> Tensor:
    """Mean over face edges of | |e_pred| - |e_gt| |."""
    _check_topology(faces, gt_faces)
    pred = as_tensor(pred)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    if pred.shape != gt.shape:
        raise ValueError("edge_loss: shape mismatch")
    lg = np.sqrt(np.sum(_face_edges(gt, faces) ** 2, axis=-1) + EDGE_EPS2)
    return tabs(_lengths(_face_edges(pred, faces)) - lg).mean()


def normal_loss(pred, gt_normals, faces, min_edge: float = 1e-6, degenerate: str = "raise") -> Tensor:
    """Mean over face edges of |unit(e_pred) . n_gt(face)|.

    Edges shorter than ``min_edge`` raise by default; with
    ``degenerate="ignore"`` they contribute zero and carry no gradient
    (unpooling can place two adjacent vertices on the same point).
    """
    if degenerate not in ("raise", "ignore"):
        raise ValueError("degenerate is 'raise' or 'ignore'")
    pred = as_tensor(pred)
    n = np.asarray(gt_normals)
    F = len(faces)
    if n.shape[-2] != F:
        raise ValueError("normal_loss: one ground-truth normal per face required")
    ep = _face_edges(pred, faces)
    raw = np.sqrt(np.sum(ep.data**2, axis=-1, keepdims=True))
    short = raw < min_edge
    if degenerate == "raise" and np.any(short):
        raise ValueError("normal_loss: degenerate predicted edge")
    # short edges get a unit pad under the root and a zero mask, so they stay finite and inert
    keep = (~short).astype(ep.dtype)
    unit = ep / sqrt(tsum(ep * ep, axis=-1, keepdims=True) + (1.0 - keep)) * keep
    n3 = np.concatenate([n, n, n], axis=-2)
    return tabs(tsum(unit * n3, axis=-1)).mean()


def gt_face_normals(vertices, faces, allow_degenerate: bool = False) -> np.ndarray:
    """Unit face normals; zero-area faces get a zero normal when allowed."""
    V = np.asarray(vertices, dtype=float)
    f = np.asarray(faces)
    if not allow_degenerate:
        if V.ndim == 2:
            return face_normals(TriMesh(V, f))
        return np.stack([face_normals(TriMesh(v, f)) for v in V])
    c = np.cross(V[..., f[:, 1], :] - V[..., f[:, 0], :], V[..., f[:, 2], :] - V[..., f[:, 0], :])
    norm = np.linalg.norm(c, axis=-1, keepdims=True)
    scale = np.linalg.norm(V - V.mean(axis=-2, keepdims=True), axis=-1).max() ** 2
    ok = norm > 1e-12 * max(scale, 1e-300)
    return np.where(ok, c / np.where(ok, norm, 1.0), 0.0)


def bce_heatmap(pred_logits, target) -> Tensor:
    return bce_with_logits(pred_logits, target)


LOSS_PARTS = ("mesh", "edge", "norm", "sil", "pose")


def total_loss(parts: dict, w: LossWeights = None):
    w = w or LossWeights()
    coef = {"mesh": 1.0, "edge": 1.0, "norm": w.lambda_n, "sil": w.lambda_s, "pose": w.lambda_p}
    total = 0.0
    for name, value in parts.items():
        if name not in coef:
            raise KeyError(f"unknown loss part {name!r}")
        v = value.data if isinstance(value, Tensor) else value
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"loss part {name} is not finite")
        if coef[name] == 0.0:
            continue
        total = total + value * coef[name]
    return total


# ---------------------------------------------------------------- metrics

class AlignmentError(ValueError):
    pass


def procrustes_transform(pred, gt):
    """Similarity (s, R, t) minimising ||s R pred + t - gt||^2 over the rows."""
    X = np.asarray(pred, dtype=float)
    Y = np.asarray(gt, dtype=float)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] < 3:
        raise AlignmentError("procrustes needs two matching N x 3 arrays with N >= 3")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var = np.sum(Xc**2)
    M = Yc.T @ Xc
    U, S, Vt = np.linalg.svd(M)
    if var <= 1e-24 or np.sum(Yc**2) <= 1e-24 or S[1] <= 1e-12 * max(S[0], 1e-300):
        raise AlignmentError("rank-deficient point configuration")
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    s = float(np.sum(S * d) / var)
    t = my - s * R @ mx
    return s, R, t


def procrustes_align(pred, gt) -> np.ndarray:
    s, R, t = procrustes_transform(pred, gt)
    return s * np.asarray(pred, dtype=float) @ R.T + t


def mean_error(a, b) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)))


def regressor_matrix(J):
    """Accept a dense array, scipy sparse matrix or hierarchy SparseMatrix."""
    if hasattr(J, "to_scipy"):
        return J.to_scipy()
    return J


def pa_metrics(pred_vertices, gt_vertices, J_regressor) -> tuple[float, float]:
    """(PA-MPJPE, PA-MPVPE) in the input units (mm)."""
    J = regressor_matrix(J_regressor)
    pv, gv = np.asarray(pred_vertices, float), np.asarray(gt_vertices, float)
    if J.shape[1] != pv.shape[0] or pv.shape != gv.shape:
        raise ValueError("regressor / vertex count mismatch")
    pj, gj = np.asarray(J @ pv), np.asarray(J @ gv)
    mpjpe = mean_error(procrustes_align(pj, gj), gj)
    mpvpe = mean_error(procrustes_align(pv, gv), gv)
    return mpjpe, mpvpe


def f_score(pred, gt, tau: float) -> float:
    """Harmonic mean of precision and recall at distance threshold tau (strict <)."""
    pred = np.asarray(pred, float).reshape(-1, 3)
    gt = np.asarray(gt, float).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("f_score on an empty point set")
    d_pred, _ = cKDTree(gt).query(pred)
    d_gt, _ = cKDTree(pred).query(gt)
    precision = float(np.mean(d_pred < tau))
    recall = float(np.mean(d_gt < tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    pa_mpjpe: float
    pa_mpvpe: float
    f5: float
    f15: float
    per_sample: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def table(self) -> str:
        rows = [("PA-MPJPE (mm)", self.pa_mpjpe), ("PA-MPVPE (mm)", self.pa_mpvpe),
                ("F@5mm", self.f5), ("F@15mm", self.f15)]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val:10.4f}" for name, val in rows)


def sample_metrics(pred_vertices, gt_vertices, J_regressor) -> dict:
    mpjpe, mpvpe = pa_metrics(pred_vertices, gt_vertices, J_regressor)
    aligned = procrustes_align(pred_vertices, gt_vertices)
    return {"pa_mpjpe": mpjpe, "pa_mpvpe": mpvpe,
            "f5": f_score(aligned, gt_vertices, 5.0), "f15": f_score(aligned, gt_vertices, 15.0)}


def aggregate(per_sample: list[dict]) -> MetricReport:
    if not per_sample:
        nan = math.nan
        return MetricReport(nan, nan, nan, nan, [])
    keys = ("pa_mpjpe", "pa_mpvpe", "f5", "f15")
    means = {k: float(np.mean([s[k] for s in per_sample])) for k in keys}
    return MetricReport(**means, per_sample=per_sample)
