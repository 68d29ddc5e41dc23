"""Differentiable layer primitives in plain numpy (NCHW, float64).

Each forward returns (output, cache); each backward consumes the upstream
gradient and the cache and returns input/parameter gradients. Convolutions
use im2col + GEMM; the column matrix is rebuilt in the backward pass so
only layer inputs are cached.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> contiguous (N, Ho, Wo, C*kh*kw) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1,
                   pad: int = 1):
    """y = conv(x, w) + b with zero padding; w has shape (F, C, kh, kw).

    The patch matrix is kept in the cache so the backward pass reuses it
    (memory for speed; one batch of cached columns per live tape)."""
    f, c, kh, kw = w.shape
    cols = _im2col(x, kh, kw, stride, pad)
    y = cols @ w.reshape(f, -1).T + b
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    return y, (x.shape, cols, w, stride, pad)


def conv2d_backward(grad_y: np.ndarray, cache):
    x_shape, cols, w, stride, pad = cache
    f, c, kh, kw = w.shape
    n, _, ho, wo = grad_y.shape
    gy = np.ascontiguousarray(grad_y.transpose(0, 2, 3, 1)).reshape(-1, f)
    grad_w = (gy.T @ cols.reshape(-1, c * kh * kw)).reshape(f, c, kh, kw)
    grad_b = gy.sum(axis=0)
    if stride == 1:
        # same-size convolution: grad_x is the full correlation of grad_y
        # with the flipped, channel-transposed kernels (pure GEMM path)
        w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gcols = _im2col(grad_y, kh, kw, 1, kh - 1 - pad)
        grad_x = gcols @ w_t.reshape(c, -1).T
        return np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2)), grad_w, grad_b
    # strided convolution: scatter column gradients back onto the input
    grad_cols = (gy @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    gc = np.ascontiguousarray(grad_cols.transpose(4, 5, 0, 3, 1, 2))
    hp, wp = x_shape[2] + 2 * pad, x_shape[3] + 2 * pad
    grad_xp = np.zeros((n, c, hp, wp), dtype=grad_y.dtype)
    for ki in range(kh):
        for kj in range(kw):
            grad_xp[:, :, ki:ki + ho * stride:stride,
                    kj:kj + wo * stride:stride] += gc[ki, kj]
    if pad:
        return grad_xp[:, :, pad:-pad, pad:-pad], grad_w, grad_b
    return grad_xp, grad_w, grad_b


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_y: np.ndarray, mask) -> np.ndarray:
    return grad_y * mask


def sigmoid_forward(x: np.ndarray):
    # overflow-safe: exponentiate negative magnitudes only
    z = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return y, y


def sigmoid_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_y * y * (1.0 - y)


def tanhshrink_forward(x: np.ndarray):
    t = np.tanh(x)
    return x - t, t


def tanhshrink_backward(grad_y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # d/dx (x - tanh x) = tanh(x)^2
    return grad_y * t * t


def upsample2_forward(x: np.ndarray):
    """Nearest-neighbour 2x upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample2_backward(grad_y: np.ndarray, x_shape) -> np.ndarray:
    n, c, h, w = x_shape
    return grad_y.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def mae_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error over all elements; subgradient sign(r) with
    sign(0) = 0."""
    r = pred - target
    loss = float(np.abs(r).mean())
    grad = np.sign(r) / r.size
    return loss, grad
