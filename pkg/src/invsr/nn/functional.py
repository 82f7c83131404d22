"""Stateless array ops with hand-written backward passes.

Activations use NHWC layout internally: the im2col gather then reads
contiguous channel runs, which is what makes CPU convolution viable here.
The public network API converts from/to the package-wide NCHW convention.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError


def conv2d_forward(x, w, b=None, stride=1):
    """Cross-correlation, 'same'-style padding of k//2. x (B,H,W,C), w (k,k,C,O)."""
    B, H, W, C = x.shape
    k, k2, Cw, O = w.shape
    if k != k2 or Cw != C:
        raise ShapeError(f"conv weight {w.shape} incompatible with input {x.shape}")
    pad = k // 2
    if k == 1 and stride == 1:
        cols = x.reshape(-1, C)
        y = cols @ w.reshape(C, O)
        if b is not None:
            y += b
        return y.reshape(B, H, W, O), (cols, x.shape, x.shape, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    s = xp.strides
    win = as_strided(
        xp,
        (B, OH, OW, k, k, C),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
    )
    cols = win.reshape(B * OH * OW, k * k * C)
    y = cols @ w.reshape(k * k * C, O)
    if b is not None:
        y += b
    return y.reshape(B, OH, OW, O), (cols, x.shape, xp.shape, pad)


def conv2d_backward(dy, w, cache, stride=1, need_dx=True, need_dw=True):
    """Gradients of conv2d_forward. Returns (dx, dw, db); skipped ones are None."""
    cols, xshape, xpshape, pad = cache
    B, H, W, C = xshape
    k, _, _, O = w.shape
    OH, OW = dy.shape[1], dy.shape[2]
    dy2 = dy.reshape(-1, O)
    dw = db = dx = None
    if need_dw:
        dw = (cols.T @ dy2).reshape(w.shape)
        db = dy2.sum(axis=0)
    if not need_dx:
        return dx, dw, db
    dcols = dy2 @ w.reshape(-1, O).T
    if k == 1 and stride == 1:
        return dcols.reshape(xshape), dw, db
    dwin = dcols.reshape(B, OH, OW, k, k, C)
    dxp = np.zeros(xpshape, dtype=dy.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki : ki + OH * stride : stride, kj : kj + OW * stride : stride, :] += dwin[
                :, :, :, ki, kj, :
            ]
    dx = dxp[:, pad : pad + H, pad : pad + W, :] if pad else dxp
    return dx, dw, db


def silu_forward(x):
    sg = 1.0 / (1.0 + np.exp(-x))
    return x * sg, (x, sg)


def silu_backward(dy, cache):
    x, sg = cache
    return dy * (sg * (1.0 + x * (1.0 - sg)))


def leaky_relu_forward(x, slope=0.2):
    mask = x > 0
    return np.where(mask, x, x * x.dtype.type(slope)), (mask, slope)


def leaky_relu_backward(dy, cache):
    mask, slope = cache
    return np.where(mask, dy, dy * dy.dtype.type(slope))


def nearest_up2_forward(x):
    y = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return y, x.shape


def nearest_up2_backward(dy, xshape):
    B, H, W, C = xshape
    return dy.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4))


def scaled_dot_attention(q, k, v):
    """Single-head attention over flattened positions. q, k, v are (B, N, C)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = np.matmul(q, k.transpose(0, 2, 1)) * q.dtype.type(scale)
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    out = np.matmul(attn, v)
    return out, (q, k, v, attn, scale)


def scaled_dot_attention_backward(dout, cache):
    q, k, v, attn, scale = cache
    dv = np.matmul(attn.transpose(0, 2, 1), dout)
    dattn = np.matmul(dout, v.transpose(0, 2, 1))
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    ds *= q.dtype.type(scale)
    dq = np.matmul(ds, k)
    dk = np.matmul(ds.transpose(0, 2, 1), q)
    return dq, dk, dv


def to_nhwc(x):
    if x.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def to_nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))
