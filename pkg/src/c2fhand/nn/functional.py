"""Differentiable layers built on the tensor engine."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..sampling import Z_MIN, ProjectionError, bilinear_setup
from .tensor import (
    Tensor,
    _accum,
    _make,
    as_tensor,
    concat,
    matmul,
    mean,
    reshape,
    softmax,
    sparse_matmul,
    sqrt,
    transpose,
)


def linear(X, W, b=None) -> Tensor:
    out = matmul(X, W)
    return out if b is None else out + b


def conv1d_fuse(F, H, W, b=None) -> Tensor:
    """Channel concat of two aligned maps followed by a kernel-size-1 convolution."""
    F, H = as_tensor(F), as_tensor(H)
    if F.shape[:-1] != H.shape[:-1]:
        raise ValueError(f"conv1d_fuse: spatial mismatch {F.shape} vs {H.shape}")
    return linear(concat([F, H], axis=-1), W, b)


# ---------------------------------------------------------------- 2D convolution

def _windows(xp, k, stride, Ho, Wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (Ho - 1) * stride + 1 : stride, : (Wo - 1) * stride + 1 : stride]
    return win  # B, Ho, Wo, C, k, k


def conv2d(X, K, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """NHWC cross-correlation, kernel (k, k, c_in, c_out), zero padding."""
    X, K = as_tensor(X), as_tensor(K)
    squeeze = X.ndim == 3
    if squeeze:
        X = reshape(X, (1,) + X.shape)
    B, Hh, Ww, C = X.shape
    k, k2, cin, cout = K.shape
    if k != k2 or cin != C:
        raise ValueError(f"conv2d: kernel {K.shape} does not fit input {X.shape}")
    Ho = (Hh + 2 * pad - k) // stride + 1
    Wo = (Ww + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    xp = np.pad(X.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else X.data
    cols = _windows(xp, k, stride, Ho, Wo).reshape(B * Ho * Wo, C * k * k)
    # window layout is (c, i, j); weight to match
    Wm = K.data.transpose(2, 0, 1, 3).reshape(C * k * k, cout)
    out = (cols @ Wm).reshape(B, Ho, Wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        if K.requires_grad:
            gW = (cols.T @ g2).reshape(C, k, k, cout).transpose(1, 2, 0, 3)
            _accum(K, gW)
        if X.requires_grad:
            dcols = (g2 @ Wm.T).reshape(B, Ho, Wo, C, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += dcols[..., i, j]
            _accum(X, dxp[:, pad : pad + Hh, pad : pad + Ww, :] if pad else dxp)

    res = _make(out, (X, K), bw, "conv2d")
    if b is not None:
        res = res + b
    if squeeze:
        res = reshape(res, res.shape[1:])
    return res


def upsample2x(X) -> Tensor:
    X = as_tensor(X)
    out = X.data.repeat(2, axis=-3).repeat(2, axis=-2)

    def bw(g):
        *lead, H2, W2, C = g.shape
        _accum(X, g.reshape(*lead, H2 // 2, 2, W2 // 2, 2, C).sum(axis=(-4, -2)))

    return _make(out, (X,), bw, "upsample2x")


def global_avg_pool(X) -> Tensor:
    return as_tensor(X).mean(axis=(-3, -2))


# ---------------------------------------------------------------- projection & sampling

def project_points(V, cams) -> Tensor:
    """Pinhole projection of (B, N, 3) points with per-sample (fx, fy, cx, cy)."""
    V = as_tensor(V)
    cams = np.asarray(cams, dtype=V.dtype).reshape(-1, 4)
    fx, fy, cx, cy = (cams[:, i, None] for i in range(4))
    x, y, z = V.data[..., 0], V.data[..., 1], V.data[..., 2]
    if np.any(z <= Z_MIN):
        raise ProjectionError("point at or behind the camera plane")
    out = np.stack([fx * x / z + cx, fy * y / z + cy], axis=-1)

    def bw(g):
        gu, gv = g[..., 0], g[..., 1]
        gx = gu * fx / z
        gy = gv * fy / z
        gz = -(gu * fx * x + gv * fy * y) / (z * z)
        _accum(V, np.stack([gx, gy, gz], axis=-1))

    return _make(out, (V,), bw, "project")


def pixels_to_grid(uv, image_wh, map_hw) -> Tensor:
    W, H = image_wh
    h, w = map_hw
    scale = np.array([w / W, h / H], dtype=as_tensor(uv).dtype)
    return as_tensor(uv) * scale - 0.5


def bilinear_sample(fmap, grid) -> Tensor:
    """Sample (B, h, w, c) maps at (B, N, 2) grid coordinates, border clamped."""
    fmap, grid = as_tensor(fmap), as_tensor(grid)
    F = fmap.data
    B, h, w, c = F.shape
    x0, x1, y0, y1, ax, ay, mx, my = bilinear_setup(grid.data, h, w)
    bi = np.arange(B)[:, None]
    f00, f01, f10, f11 = F[bi, y0, x0], F[bi, y0, x1], F[bi, y1, x0], F[bi, y1, x1]
    axe, aye = ax[..., None], ay[..., None]
    out = (1 - aye) * ((1 - axe) * f00 + axe * f01) + aye * ((1 - axe) * f10 + axe * f11)

    def bw(g):
        if fmap.requires_grad:
            gF = np.zeros_like(F)
            for yy, xx, wt in (
                (y0, x0, (1 - aye) * (1 - axe)),
                (y0, x1, (1 - aye) * axe),
                (y1, x0, aye * (1 - axe)),
                (y1, x1, aye * axe),
            ):
                np.add.at(gF, (bi, yy, xx), g * wt)
            _accum(fmap, gF)
        if grid.requires_grad:
            dx = ((1 - aye) * (f01 - f00) + aye * (f11 - f10)) * g
            dy = ((1 - axe) * (f10 - f00) + axe * (f11 - f01)) * g
            _accum(grid, np.stack([dx.sum(-1) * mx, dy.sum(-1) * my], axis=-1))

    return _make(out, (fmap, grid), bw, "bilinear_sample")


def sample_vertex_features(fmap, V, cams, image_wh, grad_coords: bool = True) -> Tensor:
    """Pixel-aligned features: project, map to the grid, bilinear sample."""
    fmap = as_tensor(fmap)
    grid = pixels_to_grid(project_points(V, cams), image_wh, fmap.shape[1:3])
    if not grad_coords:
        grid = Tensor(grid.data)
    return bilinear_sample(fmap, grid)


# ---------------------------------------------------------------- mesh ops

_GATHER_CACHE: dict = {}


def gather_matrix(table: np.ndarray, n_vertices: int) -> sp.csr_matrix:
    """Selection matrix mapping vertex rows to spiral slots; padding rows are empty."""
    table = np.asarray(table, dtype=np.int64)
    key = (table.tobytes(), table.shape, n_vertices)
    M = _GATHER_CACHE.get(key)
    if M is None:
        flat = table.ravel()
        rows = np.flatnonzero(flat >= 0)
        M = sp.csr_matrix((np.ones(len(rows)), (rows, flat[rows])), shape=(flat.size, n_vertices))
        if len(_GATHER_CACHE) > 64:
            _GATHER_CACHE.clear()
        _GATHER_CACHE[key] = M
    return M


def spiral_gather(X, table) -> Tensor:
    """(B, N, c) -> (B, N, l * c), padding slots filled with zeros."""
    X = as_tensor(X)
    table = np.asarray(table)
    N, l = table.shape
    if table.max() >= X.shape[-2]:
        raise ValueError(f"spiral table refers to vertex {table.max()} but features have {X.shape[-2]} rows")
    g = sparse_matmul(gather_matrix(table, X.shape[-2]), X)
    return reshape(g, X.shape[:-2] + (N, l * X.shape[-1]))


def spiral_conv(X, table, W, b=None) -> Tensor:
    X = as_tensor(X)
    l = np.asarray(table).shape[1]
    if as_tensor(W).shape[0] != l * X.shape[-1]:
        raise ValueError(f"spiral_conv: weight rows {as_tensor(W).shape[0]} != l*c_in = {l * X.shape[-1]}")
    if np.asarray(table).shape[0] != X.shape[-2]:
        raise ValueError("spiral_conv: table row count differs from vertex count")
    return linear(spiral_gather(X, table), W, b)


def layer_norm(X, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    X = as_tensor(X)
    xc = X - mean(X, axis=-1, keepdims=True)
    y = xc / sqrt(mean(xc * xc, axis=-1, keepdims=True) + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def mhsa(X, Wq, Wk, Wv, Wo, heads: int, return_attention: bool = False):
    """Multi-head scaled dot-product self-attention over the vertex axis."""
    X = as_tensor(X)
    squeeze = X.ndim == 2
    if squeeze:
        X = reshape(X, (1,) + X.shape)
    B, N, c = X.shape
    if c % heads:
        raise ValueError(f"feature width {c} not divisible by {heads} heads")
    d = c // heads

    def split(t):
        return transpose(reshape(t, (B, N, heads, d)), (0, 2, 1, 3))

    q, k, v = split(matmul(X, Wq)), split(matmul(X, Wk)), split(matmul(X, Wv))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))
    attn = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, N, c))
    out = matmul(ctx, Wo)
    if squeeze:
        out = reshape(out, (N, c))
    return (out, attn) if return_attention else out
