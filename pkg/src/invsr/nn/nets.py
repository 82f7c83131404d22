"""The three small networks: denoiser, start-noise predictor, discriminator.

Public forward/backward APIs use the package-wide NCHW tensor convention;
NHWC is internal. Nets are lightweight binder objects: construction attaches
layers to a ParamStore, so rebuilding a net over a loaded store is cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .functional import nearest_up2_backward, nearest_up2_forward, to_nchw, to_nhwc
from .layers import Conv2d, GroupNorm, LeakyReLU, Linear, ResBlock, SelfAttention, SiLU
from .params import ParamStore


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding: [sin(t w_k), cos(t w_k)], w_k = 10000^(-2k/dim)."""
    if dim % 2:
        raise ConfigError(f"time embedding dim must be even, got {dim}")
    if t < 0:
        raise ConfigError(f"timestep must be >= 0, got {t}")
    k = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / dim)
    return np.concatenate([np.sin(t * omega), np.cos(t * omega)])


class TimeMLP:
    def __init__(self, store, name, dim, rng=None):
        self.dim = dim
        self.l1 = Linear(store, f"{name}.l1", dim, dim, rng)
        self.act = SiLU()
        self.l2 = Linear(store, f"{name}.l2", dim, dim, rng)

    def forward(self, t: int, dtype) -> np.ndarray:
        e = time_embedding(t, self.dim).astype(dtype)
        return self.l2.forward(self.act.forward(self.l1.forward(e[None, :])))[0]

    def backward(self, demb, param_grads=True):
        d = self.l2.backward(demb[None, :], param_grads)
        self.l1.backward(self.act.backward(d), param_grads)


@dataclass(frozen=True)
class DenoiserSpec:
    image_channels: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2)
    res_blocks: int = 1
    time_dim: int = 128

    def validate(self):
        if self.base_channels % 8 or self.base_channels <= 0:
            raise ConfigError("base_channels must be a positive multiple of 8")
        if self.time_dim % 2 or self.time_dim <= 0:
            raise ConfigError("time_dim must be a positive even number")
        if len(self.channel_mults) < 1 or self.res_blocks < 1:
            raise ConfigError("need at least one level and one res block")


class Denoiser:
    """Two-level UNet with skip connections and additive time conditioning."""

    def __init__(self, spec: DenoiserSpec, store: ParamStore, rng=None):
        spec.validate()
        self.spec = spec
        self.store = store
        cs = [spec.base_channels * m for m in spec.channel_mults]
        self.levels = len(cs)
        self.time_mlp = TimeMLP(store, "time", spec.time_dim, rng)
        self.stem = Conv2d(store, "stem", spec.image_channels, cs[0], rng=rng)
        self.enc = [
            [ResBlock(store, f"enc{i}.res{r}", c, c, spec.time_dim, rng)
             for r in range(spec.res_blocks)]
            for i, c in enumerate(cs)
        ]
        self.downs = [
            Conv2d(store, f"down{i}", cs[i], cs[i + 1], stride=2, rng=rng)
            for i in range(self.levels - 1)
        ]
        self.mid = ResBlock(store, "mid", cs[-1], cs[-1], spec.time_dim, rng)
        # decoder res blocks consume [current, skip] concatenated on channels
        self.dec = [
            [ResBlock(store, f"dec{i}.res{r}", 2 * c, c, spec.time_dim, rng)
             for r in range(spec.res_blocks)]
            for i, c in enumerate(cs)
        ]
        self.ups = [
            Conv2d(store, f"up{i}", cs[i], cs[i - 1], k=1, rng=rng)
            for i in range(1, self.levels)
        ]
        self.up_nearest = [None] * (self.levels - 1)
        self.head_norm = GroupNorm(store, "head.gn", cs[0], rng)
        self.head_act = SiLU()
        self.head = Conv2d(store, "head.conv", cs[0], spec.image_channels, rng=rng,
                           zero_init=True)
        self._cache = None

    def __call__(self, x, t):
        return self.forward(x, t)

    def forward(self, x, t: int):
        B, C, H, W = _check_image(x, self.spec.image_channels)
        step = 2 ** (self.levels - 1)
        if H % step or W % step:
            raise ShapeError(f"spatial dims {(H, W)} must be divisible by {step}")
        emb = self.time_mlp.forward(t, x.dtype)
        h = self.stem.forward(to_nhwc(x))
        skips = []
        for i in range(self.levels):
            for blk in self.enc[i]:
                h = blk.forward(h, emb)
                skips.append(h)
            if i < self.levels - 1:
                h = self.downs[i].forward(h)
        h = self.mid.forward(h, emb)
        split_channels = []
        up_shapes = []
        for i in reversed(range(self.levels)):
            for blk in reversed(self.dec[i]):
                skip = skips.pop()
                split_channels.append(h.shape[-1])
                h = blk.forward(np.concatenate([h, skip], axis=-1), emb)
            if i > 0:
                h, shape = nearest_up2_forward(h)
                up_shapes.append(shape)
                h = self.ups[i - 1].forward(h)
        out = self.head.forward(self.head_act.forward(self.head_norm.forward(h)))
        self._cache = (split_channels, up_shapes)
        return to_nchw(out)

    def backward(self, dout, param_grads=True):
        """Backprop a gradient w.r.t. the output; returns gradient w.r.t. x."""
        split_channels, up_shapes = self._cache
        split_channels = list(split_channels)
        up_shapes = list(up_shapes)
        demb = None

        def add_emb(d):
            nonlocal demb
            demb = d if demb is None else demb + d

        dh = self.head.backward(to_nhwc(dout), param_grads=param_grads)
        dh = self.head_norm.backward(self.head_act.backward(dh), param_grads)
        dskips = []
        for i in range(self.levels):
            if i > 0:
                dh = self.ups[i - 1].backward(dh, param_grads=param_grads)
                dh = nearest_up2_backward(dh, up_shapes.pop())
            for blk in self.dec[i]:
                dcat, de = blk.backward(dh, param_grads)
                add_emb(de)
                c = split_channels.pop()
                dh, dskip = dcat[..., :c], dcat[..., c:]
                dskips.append(dskip)
        dh, de = self.mid.backward(dh, param_grads)
        add_emb(de)
        for i in reversed(range(self.levels)):
            if i < self.levels - 1:
                dh = self.downs[i].backward(dh, param_grads=param_grads)
            for blk in reversed(self.enc[i]):
                dh = dh + dskips.pop(0)
                dh, de = blk.backward(dh, param_grads)
                add_emb(de)
        dx = self.stem.backward(dh, param_grads=param_grads)
        self.time_mlp.backward(demb, param_grads)
        return to_nchw(dx)


@dataclass(frozen=True)
class PredictorSpec:
    image_channels: int = 3
    base_channels: int = 32
    time_dim: int = 128
    logvar_clamp: float = 10.0

    def validate(self):
        if self.base_channels % 8 or self.base_channels <= 0:
            raise ConfigError("base_channels must be a positive multiple of 8")
        if self.time_dim % 2 or self.time_dim <= 0:
            raise ConfigError("time_dim must be a positive even number")


class Predictor:
    """Encoder-decoder start-noise predictor emitting (mean, logvar).

    Two stride-2 down blocks, each with a residual block and single-head
    self-attention at its output resolution, then two nearest-neighbor up
    blocks back to full resolution.
    """

    def __init__(self, spec: PredictorSpec, store: ParamStore, rng=None):
        spec.validate()
        self.spec = spec
        self.store = store
        b = spec.base_channels
        C = spec.image_channels
        self.time_mlp = TimeMLP(store, "time", spec.time_dim, rng)
        self.stem = Conv2d(store, "stem", C, b, rng=rng)
        self.down1 = Conv2d(store, "down1.conv", b, 2 * b, stride=2, rng=rng)
        self.res1 = ResBlock(store, "down1.res", 2 * b, 2 * b, spec.time_dim, rng)
        self.attn1 = SelfAttention(store, "down1.attn", 2 * b, rng)
        self.down2 = Conv2d(store, "down2.conv", 2 * b, 2 * b, stride=2, rng=rng)
        self.res2 = ResBlock(store, "down2.res", 2 * b, 2 * b, spec.time_dim, rng)
        self.attn2 = SelfAttention(store, "down2.attn", 2 * b, rng)
        self.up1_conv = Conv2d(store, "up1.conv", 2 * b, 2 * b, rng=rng)
        self.up1_norm = GroupNorm(store, "up1.gn", 2 * b, rng)
        self.up1_act = SiLU()
        self.up2_conv = Conv2d(store, "up2.conv", 2 * b, b, rng=rng)
        self.up2_norm = GroupNorm(store, "up2.gn", b, rng)
        self.up2_act = SiLU()
        self.head = Conv2d(store, "head.conv", b, 2 * C, rng=rng, zero_init=True)
        self._clamp_mask = None

    def __call__(self, y0, t):
        return self.forward(y0, t)

    def forward(self, y0, t: int):
        B, C, H, W = _check_image(y0, self.spec.image_channels)
        if H % 4 or W % 4:
            raise ShapeError(f"spatial dims {(H, W)} must be divisible by 4")
        from .functional import nearest_up2_forward
        emb = self.time_mlp.forward(t, y0.dtype)
        h = self.stem.forward(to_nhwc(y0))
        h = self.attn1.forward(self.res1.forward(self.down1.forward(h), emb))
        h = self.attn2.forward(self.res2.forward(self.down2.forward(h), emb))
        h, self._up1_shape = nearest_up2_forward(h)
        h = self.up1_act.forward(self.up1_norm.forward(self.up1_conv.forward(h)))
        h, self._up2_shape = nearest_up2_forward(h)
        h = self.up2_act.forward(self.up2_norm.forward(self.up2_conv.forward(h)))
        out = to_nchw(self.head.forward(h))
        mean, logvar = out[:, :C], out[:, C:]
        lim = y0.dtype.type(self.spec.logvar_clamp)
        self._clamp_mask = (logvar > -lim) & (logvar < lim)
        return mean, np.clip(logvar, -lim, lim)

    def backward(self, dmean, dlogvar, param_grads=True):
        from .functional import nearest_up2_backward
        dlogvar = np.where(self._clamp_mask, dlogvar, 0.0)
        dout = to_nhwc(np.concatenate([dmean, dlogvar], axis=1))
        dh = self.head.backward(dout, param_grads=param_grads)
        dh = self.up2_norm.backward(self.up2_act.backward(dh), param_grads)
        dh = self.up2_conv.backward(dh, param_grads=param_grads)
        dh = nearest_up2_backward(dh, self._up2_shape)
        dh = self.up1_norm.backward(self.up1_act.backward(dh), param_grads)
        dh = self.up1_conv.backward(dh, param_grads=param_grads)
        dh = nearest_up2_backward(dh, self._up1_shape)
        demb = None
        dh = self.attn2.backward(dh, param_grads)
        dh, demb = self.res2.backward(dh, param_grads)
        dh = self.down2.backward(dh, param_grads=param_grads)
        dh = self.attn1.backward(dh, param_grads)
        dh, de = self.res1.backward(dh, param_grads)
        demb = demb + de
        dh = self.down1.backward(dh, param_grads=param_grads)
        dx = self.stem.backward(dh, param_grads=param_grads)
        self.time_mlp.backward(demb, param_grads)
        return to_nchw(dx)


@dataclass(frozen=True)
class DiscriminatorSpec:
    image_channels: int = 3
    base_channels: int = 32
    leaky_slope: float = 0.2

    def validate(self):
        if self.base_channels <= 0:
            raise ConfigError("base_channels must be positive")


class Discriminator:
    """Three stride-2 conv blocks and a pooled scalar head (one logit per item)."""

    def __init__(self, spec: DiscriminatorSpec, store: ParamStore, rng=None):
        spec.validate()
        self.spec = spec
        self.store = store
        b = spec.base_channels
        self.convs = [
            Conv2d(store, "block0", spec.image_channels, b, stride=2, rng=rng),
            Conv2d(store, "block1", b, 2 * b, stride=2, rng=rng),
            Conv2d(store, "block2", 2 * b, 4 * b, stride=2, rng=rng),
        ]
        self.acts = [LeakyReLU(spec.leaky_slope) for _ in range(3)]
        self.head = Linear(store, "head", 4 * b, 1, rng, zero_init=True)
        self._pool_shape = None

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        _check_image(x, self.spec.image_channels)
        h = to_nhwc(x)
        for conv, act in zip(self.convs, self.acts):
            h = act.forward(conv.forward(h))
        self._pool_shape = h.shape
        pooled = h.mean(axis=(1, 2))
        return self.head.forward(pooled)[:, 0]

    def backward(self, dlogits, param_grads=True):
        B, H, W, C = self._pool_shape
        dpool = self.head.backward(dlogits[:, None], param_grads)
        dh = np.broadcast_to(
            dpool[:, None, None, :] / dpool.dtype.type(H * W), self._pool_shape
        ).copy()
        for conv, act in zip(reversed(self.convs), reversed(self.acts)):
            dh = conv.backward(act.backward(dh), param_grads=param_grads)
        return to_nchw(dh)


_NET_FOR_SPEC = {
    DenoiserSpec: Denoiser,
    PredictorSpec: Predictor,
    DiscriminatorSpec: Discriminator,
}


def build_net(spec, store: ParamStore, rng=None):
    try:
        cls = _NET_FOR_SPEC[type(spec)]
    except KeyError:
        raise ConfigError(f"unknown network spec {type(spec).__name__}")
    return cls(spec, store, rng)


def init_params(spec, seed: int, dtype=np.float32) -> ParamStore:
    """Fresh deterministic parameters for `spec` (zero biases, zeroed heads)."""
    store = ParamStore(dtype)
    build_net(spec, store, np.random.default_rng(seed))
    return store


def reparameterize(mean, logvar, xi):
    """mean + exp(logvar / 2) * xi, elementwise."""
    if not (mean.shape == logvar.shape == xi.shape):
        raise ShapeError(
            f"shape mismatch: {mean.shape}, {logvar.shape}, {xi.shape}"
        )
    return mean + np.exp(0.5 * logvar) * xi


def denoiser_forward(params, spec, x_t, t):
    return Denoiser(spec, params).forward(x_t, t)


def predictor_forward(params, spec, y0, t):
    return Predictor(spec, params).forward(y0, t)


def discriminator_forward(params, spec, x):
    return Discriminator(spec, params).forward(x)


def _check_image(x, channels):
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {x.shape[1]}")
    return x.shape
