"""Layer primitives for the policy/value networks: 3x3 same-padding
convolution (im2col + GEMM), 2x2 max pooling, fully-connected layers, and
ReLU, with exact reverse-mode backward passes.

Feature maps use NHWC layout; conv weights are (3, 3, C_in, C_out) and FC
weights (D_in, D_out), so every matmul runs without a transposed copy.  The
patch gather and pooling have numba and numpy variants; the GEMMs go through
BLAS either way.
"""

from __future__ import annotations

import numpy as np

from . import accel
from .accel import njit


# -- im2col ------------------------------------------------------------------


def _im2col_numpy(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    # (N, H, W, C, 3, 3) -> rows (n, i, j), columns in (u, v, c) order
    n, _, _, c = xp.shape
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, 9 * c)


@njit(cache=True)
def _im2col_numba(xp, h, w):  # pragma: no cover - numba-compiled
    n = xp.shape[0]
    c = xp.shape[3]
    cols = np.empty((n * h * w, 9 * c), dtype=xp.dtype)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                row = (b * h + i) * w + j
                k = 0
                for u in range(3):
                    for v in range(3):
                        for ch in range(c):
                            cols[row, k] = xp[b, i + u, j + v, ch]
                            k += 1
    return cols


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    if accel.use_numba():
        return _im2col_numba(xp, h, w)
    return _im2col_numpy(xp, h, w)


# -- conv3x3, stride 1, same padding ------------------------------------------


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (N,H,W,C_in), w (3,3,C_in,C_out) -> y (N,H,W,C_out), cache."""
    n, h, wd, _ = x.shape
    c_out = w.shape[3]
    cols = _im2col(x)
    y = cols @ w.reshape(-1, c_out)
    y += b
    return y.reshape(n, h, wd, c_out), (cols, x.shape, w)


def conv3x3_backward(dy: np.ndarray, cache):
    cols, x_shape, w = cache
    n, h, wd, c_in = x_shape
    c_out = w.shape[3]
    dy2 = np.ascontiguousarray(dy).reshape(n * h * wd, c_out)
    dw = (cols.T @ dy2).reshape(3, 3, c_in, c_out)
    db = dy2.sum(axis=0)
    # dx = same-pad conv of dy with the spatially flipped, io-swapped kernel
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dcols = _im2col(dy.reshape(n, h, wd, c_out))
    dx = (dcols @ w_flip.reshape(-1, c_in)).reshape(n, h, wd, c_in)
    return dx, dw, db


# -- 2x2 max pooling, stride 2 -------------------------------------------------


def _pool_pack_numpy(x: np.ndarray):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xr = x[:, : h2 * 2, : w2 * 2]
    xr = xr.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = xr.argmax(axis=-1)  # ties go to the first (row-major) window cell
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.int8)


@njit(cache=True)
def _pool_pack_numba(x):  # pragma: no cover - numba-compiled
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    y = np.empty((n, h2, w2, c), dtype=x.dtype)
    idx = np.empty((n, h2, w2, c), dtype=np.int8)
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for ch in range(c):
                    best = x[b, 2 * i, 2 * j, ch]
                    arg = 0
                    k = 0
                    for u in range(2):
                        for v in range(2):
                            val = x[b, 2 * i + u, 2 * j + v, ch]
                            if val > best:
                                best = val
                                arg = k
                            k += 1
                    y[b, i, j, ch] = best
                    idx[b, i, j, ch] = arg
    return y, idx


def maxpool2_forward(x: np.ndarray):
    if accel.use_numba():
        y, idx = _pool_pack_numba(np.ascontiguousarray(x))
    else:
        y, idx = _pool_pack_numpy(x)
    return y, (idx, x.shape, x.dtype)


def maxpool2_backward(dy: np.ndarray, cache):
    idx, x_shape, dtype = cache
    n, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    packed = np.zeros((n, h2, w2, c, 4), dtype=dtype)
    np.put_along_axis(packed, idx[..., None].astype(np.int64), dy[..., None].astype(dtype), axis=-1)
    dx = np.zeros(x_shape, dtype=dtype)
    block = packed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx[:, : h2 * 2, : w2 * 2] = block.reshape(n, h2 * 2, w2 * 2, c)
    return dx


# -- dense / relu ---------------------------------------------------------------


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def fc_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(dy: np.ndarray, mask: np.ndarray):
    return dy * mask
