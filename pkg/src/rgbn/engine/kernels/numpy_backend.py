"""Vectorised numpy convolution kernels (fallback backend).

Forward and backward are expressed as an im2col gather (one slice copy per
kernel offset), a single BLAS matmul, and for the input gradient a col2im
scatter (one slice add per kernel offset).  All arithmetic is float64.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def _out_dim(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Gather sliding windows into an array of shape (n, c, kh, kw, ho, wo)."""
    n, c, h, w = x.shape
    ho = _out_dim(h, kh, stride, pad)
    wo = _out_dim(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    """Cross-correlate a batch (n,c,h,w) with filters (k,c,kh,kw) plus bias (k,)."""
    k, c, kh, kw = weight.shape
    cols = _im2col(x, kh, kw, stride, pad)
    y = np.tensordot(weight, cols, axes=([1, 2, 3], [1, 2, 3]))  # (k, n, ho, wo)
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    y += bias[None, :, None, None]
    return y


def conv2d_backward(x: np.ndarray, weight: np.ndarray, dy: np.ndarray,
                    stride: int, pad: int, need_dx: bool = True):
    """Gradients of conv2d_forward; returns (dx or None, dweight, dbias)."""
    n, c, h, w = x.shape
    k, _, kh, kw = weight.shape
    _, _, ho, wo = dy.shape

    cols = _im2col(x, kh, kw, stride, pad)
    dweight = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 4, 5]))  # (k, c, kh, kw)
    dbias = dy.sum(axis=(0, 2, 3))

    dx = None
    if need_dx:
        # (c, kh, kw, n, ho, wo) -> scatter-add each kernel offset back
        dcols = np.tensordot(weight, dy, axes=(0, 1))
        dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += \
                    dcols[:, i, j].transpose(1, 0, 2, 3)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        dx = np.ascontiguousarray(dx)
    return dx, dweight, dbias
