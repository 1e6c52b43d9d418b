"""Fully convolutional residual score network with hand-written backprop.

Layout (all convolutions 3x3, no resolution change)::

    input = concat(x_t, pos(i), pos(j))                 C + 4L channels
    h = conv_in(input)
    for each block:
        a = conv1(silu(h)) * (1 + scale_t) + shift_t     time modulation
        h = h + conv2(silu(a))
    z = conv_out(silu(h))                                zero-initialized

``scale_t``/``shift_t`` come from a two-layer perceptron over a sinusoidal
embedding of the normalized noise level ``t / T``. ``L = 0`` disables
positional conditioning (input channels = C).
"""

from __future__ import annotations

import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import FileFormatError, ShapeError
from ..grid import PositionalEncoding
from ..schedule import NoiseSchedule
from .nn import Conv2d, Dense, silu, silu_backward

TIME_FEATURES = 32
_MAX_FREQ = 1000.0

CHECKPOINT_MAGIC = b"PDSN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    depth: int = 2
    width: int = 32
    L: int = 6
    C: int = 1
    T: int = 1000

    @property
    def in_channels(self) -> int:
        return self.C + 4 * self.L


def time_features(tau: np.ndarray) -> np.ndarray:
    """Sinusoidal features of normalized time, shape ``(B, TIME_FEATURES)``."""
    half = TIME_FEATURES // 2
    freqs = np.exp(np.linspace(0.0, np.log(_MAX_FREQ), half))
    arg = np.asarray(tau, dtype=np.float64)[:, None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def parameter_count(cfg: NetConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    w, c_in, d = cfg.width, cfg.in_channels, cfg.depth
    conv_in = 9 * c_in * w + w
    blocks = d * 2 * (9 * w * w + w)
    conv_out = 9 * w * cfg.C + cfg.C
    mlp = (TIME_FEATURES * w + w) + (w * 2 * d * w + 2 * d * w)
    return conv_in + blocks + conv_out + mlp


class ConvScoreNet:
    def __init__(self, cfg: NetConfig, params: dict[str, np.ndarray]):
        self._build_layers(cfg)
        expected = self.param_shapes()
        if list(params) != list(expected) or any(params[k].shape != s for k, s in expected.items()):
            raise ShapeError("parameter set does not match the network configuration")
        self.params = params

    def layers(self):
        yield self.conv_in
        for c1, c2 in self.blocks:
            yield c1
            yield c2
        yield self.conv_out
        yield self.time1
        yield self.time2

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.layers():
            shapes.update(layer.param_shapes())
        return shapes

    def _build_layers(self, cfg: NetConfig) -> None:
        self.cfg = cfg
        w = cfg.width
        self.conv_in = Conv2d("conv_in", cfg.in_channels, w)
        self.blocks = [(Conv2d(f"block{b}.conv1", w, w), Conv2d(f"block{b}.conv2", w, w)) for b in range(cfg.depth)]
        self.conv_out = Conv2d("conv_out", w, cfg.C)
        self.time1 = Dense("time.fc1", TIME_FEATURES, w)
        self.time2 = Dense("time.fc2", w, 2 * cfg.depth * w)

    @classmethod
    def _skeleton(cls, cfg: NetConfig) -> ConvScoreNet:
        net = cls.__new__(cls)
        net._build_layers(cfg)
        return net

    @classmethod
    def initialize(cls, cfg: NetConfig, seed: int = 0) -> ConvScoreNet:
        rng = np.random.default_rng(seed)
        net = cls._skeleton(cfg)
        params = {}
        for layer in net.layers():
            params.update(layer.init(rng, zero=layer is net.conv_out))
        # f32-representable so a checkpoint round trip is lossless
        params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
        return cls(cfg, params)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # --- forward / backward ------------------------------------------------

    def _input(self, x: np.ndarray, enc) -> np.ndarray:
        """Concatenate the encoding channels.

        ``enc`` is a :class:`PositionalEncoding` shared by the batch, or an
        array of stacked channels shaped ``(H, W, 4L)`` or ``(B, H, W, 4L)``.
        """
        cfg = self.cfg
        if x.ndim != 4 or x.shape[-1] != cfg.C:
            raise ShapeError(f"expected (B, H, W, {cfg.C}) input, got {x.shape}")
        if cfg.L == 0:
            return x
        if enc is None:
            raise ShapeError(f"network expects a degree-{cfg.L} positional encoding")
        if isinstance(enc, PositionalEncoding):
            if enc.L != cfg.L:
                raise ShapeError(f"positional encoding degree {enc.L} does not match network degree {cfg.L}")
            enc = enc.stacked()
        if enc.shape[-1] != 4 * cfg.L:
            raise ShapeError(f"encoding has {enc.shape[-1]} channels, network expects {4 * cfg.L}")
        if enc.shape[-3:-1] != x.shape[1:3]:
            raise ShapeError(f"encoding footprint {enc.shape[-3:-1]} does not match image {x.shape[1:3]}")
        pe = np.broadcast_to(enc.astype(x.dtype, copy=False), x.shape[:3] + (4 * cfg.L,))
        return np.concatenate([x, pe], axis=-1)

    def forward(self, x: np.ndarray, tau: np.ndarray, enc: PositionalEncoding | None, dtype=np.float64):
        """Predicted noise for a batch; ``tau`` holds per-item normalized times."""
        p = self.params
        width, depth = self.cfg.width, self.cfg.depth
        x = np.asarray(x, dtype=dtype)
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (x.shape[0],))

        feats = time_features(tau).astype(dtype)
        e1, c_t1 = self.time1.forward(p, feats)
        e1a, s_t = silu(e1)
        mod, c_t2 = self.time2.forward(p, e1a)
        mod4 = mod.reshape(-1, depth, 2, width)

        h, c_in = self.conv_in.forward(p, self._input(x, enc))
        block_caches = []
        for b, (conv1, conv2) in enumerate(self.blocks):
            u, su = silu(h)
            a, c1 = conv1.forward(p, u)
            scale = mod4[:, b, 0][:, None, None, :]
            shift = mod4[:, b, 1][:, None, None, :]
            am = a * (1.0 + scale) + shift
            v, sv = silu(am)
            r, c2 = conv2.forward(p, v)
            block_caches.append((h, su, c1, a, scale, am, sv, c2))
            h = h + r
        hf, sf = silu(h)
        z, c_out = self.conv_out.forward(p, hf)
        cache = (c_t1, e1, s_t, c_t2, c_in, block_caches, h, sf, c_out)
        return z, cache

    def backward(self, cache, g: np.ndarray, need_params: bool = True):
        """Gradients of ``sum(g * z)``: returns ``(d_x, param_grads)``."""
        p = self.params
        width, depth, C = self.cfg.width, self.cfg.depth, self.cfg.C
        c_t1, e1, s_t, c_t2, c_in, block_caches, h_last, sf, c_out = cache
        grads: dict[str, np.ndarray] = {}

        dhf, gr = self.conv_out.backward(p, c_out, g, need_params)
        grads.update(gr)
        dh = silu_backward(h_last, sf, dhf)
        dmod4 = np.zeros((g.shape[0], depth, 2, width), dtype=g.dtype) if need_params else None
        for b in reversed(range(depth)):
            conv1, conv2 = self.blocks[b]
            h, su, c1, a, scale, am, sv, c2 = block_caches[b]
            dv, gr = conv2.backward(p, c2, dh, need_params)
            grads.update(gr)
            dam = silu_backward(am, sv, dv)
            if need_params:
                dmod4[:, b, 0] = (dam * a).sum(axis=(1, 2))
                dmod4[:, b, 1] = dam.sum(axis=(1, 2))
            da = dam * (1.0 + scale)
            du, gr = conv1.backward(p, c1, da, need_params)
            grads.update(gr)
            dh = dh + silu_backward(h, su, du)
        dinp, gr = self.conv_in.backward(p, c_in, dh, need_params, in_channels=C)
        grads.update(gr)

        if need_params:
            de1a, gr = self.time2.backward(p, c_t2, dmod4.reshape(g.shape[0], -1))
            grads.update(gr)
            de1 = silu_backward(e1, s_t, de1a)
            _, gr = self.time1.backward(p, c_t1, de1)
            grads.update(gr)
            grads = {k: grads[k] for k in self.params}
        return dinp, grads

    # --- score interface ---------------------------------------------------

    def _batch(self, x_t):
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim == 3:
            return x_t[None], True
        return x_t, False

    def predict_noise(self, x_t, t: int, schedule: NoiseSchedule, enc=None) -> np.ndarray:
        schedule.check_step(t)
        xb, single = self._batch(x_t)
        z, _ = self.forward(xb, schedule.noise_level(t), enc)
        return z[0] if single else z

    def score(self, x_t, t: int, schedule: NoiseSchedule, enc=None) -> np.ndarray:
        """``-z_theta / sqrt(1 - abar_t)``."""
        schedule.check_step(t)
        return -self.predict_noise(x_t, t, schedule, enc) / np.sqrt(1.0 - schedule.alpha_bar[t - 1])

    def vjp(self, x_t, t: int, schedule: NoiseSchedule, enc, v) -> np.ndarray:
        schedule.check_step(t)
        xb, single = self._batch(x_t)
        v = np.asarray(v, dtype=np.float64)
        vb = v[None] if single else v
        if vb.shape != xb.shape:
            raise ShapeError(f"cotangent shape {v.shape} != input shape {np.shape(x_t)}")
        _, cache = self.forward(xb, schedule.noise_level(t), enc)
        dx, _ = self.backward(cache, vb, need_params=False)
        dx = -dx / np.sqrt(1.0 - schedule.alpha_bar[t - 1])
        return dx[0] if single else dx


def net_score(net: ConvScoreNet, x_t, t, schedule, enc):
    return net.score(x_t, t, schedule, enc)


def net_vjp(net: ConvScoreNet, x_t, t, schedule, enc, v):
    return net.vjp(x_t, t, schedule, enc, v)


# --- checkpoint I/O ----------------------------------------------------------

_HEADER = struct.Struct("<4sI5I")


def save_checkpoint(net: ConvScoreNet, path: str | os.PathLike) -> None:
    """Write the versioned ``PDSN`` checkpoint (weights as little-endian f32)."""
    cfg = net.cfg
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.depth, cfg.width, cfg.L, cfg.C, cfg.T))
        for arr in net.params.values():
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | os.PathLike) -> ConvScoreNet:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated checkpoint header")
    magic, version, depth, width, L, C, T = _HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: not a PDSN checkpoint")
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
    cfg = NetConfig(depth=depth, width=width, L=L, C=C, T=T)
    skeleton = ConvScoreNet._skeleton(cfg)
    pos = _HEADER.size
    params = {}
    for name, shape in skeleton.param_shapes().items():
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        if tuple(dims) != tuple(shape):
            raise FileFormatError(f"{path}: tensor {name} has shape {dims}, expected {shape}")
        count = int(np.prod(dims))
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 4 * count
    if pos != len(buf):
        raise FileFormatError(f"{path}: {len(buf) - pos} trailing bytes after weights")
    return ConvScoreNet(cfg, params)


def config_dict(cfg: NetConfig) -> dict:
    return asdict(cfg)
