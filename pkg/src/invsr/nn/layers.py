"""Trainable layers: thin stateful wrappers over the functional ops.

Each layer binds its parameters into a ParamStore at construction, caches
whatever forward() needs, and accumulates parameter gradients in backward().
Layers operate on NHWC activations.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from . import functional as F
from .params import ParamStore, kaiming_uniform, ones_init, zeros_init


def _weight_init(rng, zero_init):
    if zero_init:
        return zeros_init
    return kaiming_uniform(rng) if rng is not None else None


class Conv2d:
    def __init__(self, store: ParamStore, name, c_in, c_out, k=3, stride=1,
                 rng=None, zero_init=False):
        self.stride = stride
        self.w = store.ensure(f"{name}.w", (k, k, c_in, c_out), _weight_init(rng, zero_init))
        self.b = store.ensure(f"{name}.b", (c_out,), zeros_init if (rng or zero_init) else None)
        self._cache = None

    def forward(self, x):
        y, self._cache = F.conv2d_forward(x, self.w.value, self.b.value, self.stride)
        return y

    def backward(self, dy, need_dx=True, param_grads=True):
        dx, dw, db = F.conv2d_backward(
            dy, self.w.value, self._cache, self.stride,
            need_dx=need_dx, need_dw=param_grads,
        )
        if param_grads:
            self.w.grad += dw
            self.b.grad += db
        return dx


class Linear:
    def __init__(self, store, name, d_in, d_out, rng=None, zero_init=False):
        self.w = store.ensure(f"{name}.w", (d_in, d_out), _weight_init(rng, zero_init))
        self.b = store.ensure(f"{name}.b", (d_out,), zeros_init if (rng or zero_init) else None)
        self._cache = None

    def forward(self, x):
        self._cache = x
        return x @ self.w.value + self.b.value

    def backward(self, dy, param_grads=True):
        x = self._cache
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        if param_grads:
            self.w.grad += x2.T @ dy2
            self.b.grad += dy2.sum(axis=0)
        return (dy2 @ self.w.value.T).reshape(x.shape)


class GroupNorm:
    """Normalizes over (H, W) and channel groups of ~8 channels."""

    EPS = 1e-5

    def __init__(self, store, name, channels, rng=None, group_size=8):
        self.groups = max(1, channels // group_size)
        if channels % self.groups:
            raise ConfigError(f"channels {channels} not divisible into {self.groups} groups")
        has_init = rng is not None
        self.gamma = store.ensure(f"{name}.g", (channels,), ones_init if has_init else None)
        self.beta = store.ensure(f"{name}.b", (channels,), zeros_init if has_init else None)
        self._cache = None

    def forward(self, x):
        B, H, W, C = x.shape
        G = self.groups
        xg = x.reshape(B, H, W, G, C // G)
        mu = xg.mean(axis=(1, 2, 4), keepdims=True)
        var = xg.var(axis=(1, 2, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + x.dtype.type(self.EPS))
        xhat = (xg - mu) * inv
        y = xhat.reshape(B, H, W, C) * self.gamma.value + self.beta.value
        self._cache = (xhat, inv, x.shape)
        return y

    def backward(self, dy, param_grads=True):
        xhat, inv, xshape = self._cache
        B, H, W, C = xshape
        G = self.groups
        if param_grads:
            xflat = xhat.reshape(B, H, W, C)
            self.gamma.grad += (dy * xflat).sum(axis=(0, 1, 2))
            self.beta.grad += dy.sum(axis=(0, 1, 2))
        dxhat = (dy * self.gamma.value).reshape(B, H, W, G, C // G)
        m1 = dxhat.mean(axis=(1, 2, 4), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(1, 2, 4), keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx.reshape(xshape)


class SiLU:
    def __init__(self):
        self._cache = None

    def forward(self, x):
        y, self._cache = F.silu_forward(x)
        return y

    def backward(self, dy):
        return F.silu_backward(dy, self._cache)


class LeakyReLU:
    def __init__(self, slope=0.2):
        self.slope = slope
        self._cache = None

    def forward(self, x):
        y, self._cache = F.leaky_relu_forward(x, self.slope)
        return y

    def backward(self, dy):
        return F.leaky_relu_backward(dy, self._cache)


class NearestUp2:
    def __init__(self):
        self._shape = None

    def forward(self, x):
        y, self._shape = F.nearest_up2_forward(x)
        return y

    def backward(self, dy):
        return F.nearest_up2_backward(dy, self._shape)


class SelfAttention:
    """Pre-normed single-head self-attention with a residual connection.

    The output projection is zero-initialized so a freshly built block is
    the identity map.
    """

    def __init__(self, store, name, channels, rng=None):
        self.norm = GroupNorm(store, f"{name}.norm", channels, rng)
        self.wq = Linear(store, f"{name}.q", channels, channels, rng)
        self.wk = Linear(store, f"{name}.k", channels, channels, rng)
        self.wv = Linear(store, f"{name}.v", channels, channels, rng)
        self.wo = Linear(store, f"{name}.o", channels, channels, rng, zero_init=True)
        self._cache = None

    def forward(self, x):
        B, H, W, C = x.shape
        h = self.norm.forward(x).reshape(B, H * W, C)
        q, k, v = self.wq.forward(h), self.wk.forward(h), self.wv.forward(h)
        att, att_cache = F.scaled_dot_attention(q, k, v)
        out = self.wo.forward(att)
        self._cache = (att_cache, x.shape)
        return x + out.reshape(x.shape)

    def backward(self, dy, param_grads=True):
        att_cache, xshape = self._cache
        B, H, W, C = xshape
        datt = self.wo.backward(dy.reshape(B, H * W, C), param_grads)
        dq, dk, dv = F.scaled_dot_attention_backward(datt, att_cache)
        dh = self.wq.backward(dq, param_grads)
        dh += self.wk.backward(dk, param_grads)
        dh += self.wv.backward(dv, param_grads)
        dx = self.norm.backward(dh.reshape(xshape), param_grads)
        return dy + dx


class ResBlock:
    """norm-silu-conv twice with an additive per-channel timestep term."""

    def __init__(self, store, name, c_in, c_out, emb_dim, rng=None):
        self.gn1 = GroupNorm(store, f"{name}.gn1", c_in, rng)
        self.act1 = SiLU()
        self.conv1 = Conv2d(store, f"{name}.conv1", c_in, c_out, rng=rng)
        self.emb_proj = Linear(store, f"{name}.emb", emb_dim, c_out, rng)
        self.gn2 = GroupNorm(store, f"{name}.gn2", c_out, rng)
        self.act2 = SiLU()
        self.conv2 = Conv2d(store, f"{name}.conv2", c_out, c_out, rng=rng)
        self.skip = Conv2d(store, f"{name}.skip", c_in, c_out, k=1, rng=rng) if c_in != c_out else None

    def forward(self, x, emb):
        h = self.conv1.forward(self.act1.forward(self.gn1.forward(x)))
        h = h + self.emb_proj.forward(emb[None, :])[0]
        h = self.conv2.forward(self.act2.forward(self.gn2.forward(h)))
        return h + (self.skip.forward(x) if self.skip else x)

    def backward(self, dy, param_grads=True):
        dh = self.conv2.backward(dy, param_grads=param_grads)
        dh = self.gn2.backward(self.act2.backward(dh), param_grads)
        demb = self.emb_proj.backward(dh.sum(axis=(0, 1, 2))[None, :], param_grads)[0]
        dx = self.conv1.backward(dh, param_grads=param_grads)
        dx = self.gn1.backward(self.act1.backward(dx), param_grads)
        if self.skip:
            dx += self.skip.backward(dy, param_grads=param_grads)
        else:
            dx += dy
        return dx, demb
