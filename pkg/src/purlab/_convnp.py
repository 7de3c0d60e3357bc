"""Numpy fallback for the conv2d hot kernels.

Same contract as the compiled core in ``_convcore.pyx``: float64,
zero padding, square kernels, stride 1 or 2. Each kernel offset becomes
one GEMM via tensordot, which keeps temporaries small and leaves the
heavy lifting to BLAS.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    _, _, kh, kw = w.shape
    in_h, in_w = x.shape[2], x.shape[3]
    out_h = (in_h + 2 * pad - kh) // stride + 1
    out_w = (in_w + 2 * pad - kw) // stride + 1
    xp = _pad(x, pad)
    y = np.zeros((x.shape[0], out_h, out_w, w.shape[0]))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
            y += np.tensordot(xs, w[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_bwd_input(gy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                     in_h: int, in_w: int) -> np.ndarray:
    batch, _, out_h, out_w = gy.shape
    _, cin, kh, kw = w.shape
    gxp = np.zeros((batch, cin, in_h + 2 * pad, in_w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                contrib.transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:-pad, pad:-pad])
    return gxp


def conv2d_bwd_weight(x: np.ndarray, gy: np.ndarray, stride: int, pad: int,
                      kh: int, kw: int) -> np.ndarray:
    out_h, out_w = gy.shape[2], gy.shape[3]
    xp = _pad(x, pad)
    gw = np.empty((gy.shape[1], x.shape[1], kh, kw))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
            gw[:, :, i, j] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw
