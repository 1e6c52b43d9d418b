"""Minimal layers with hand-written backward passes.

Every layer is functional: ``forward`` returns the output and a cache, and
``backward(cache, grad)`` returns the input gradient plus a dict of parameter
gradients (empty when ``need_params`` is false, which is how input-VJPs skip
the weight-gradient matmuls). Activations are NHWC.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def silu_backward(x, s, g):
    return g * (s * (1.0 + x * (1.0 - s)))


class Conv2d:
    """Stride-1, zero-padded ``k x k`` convolution; keeps the spatial size."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int = 3):
        self.name = name
        self.c_in, self.c_out, self.k = c_in, c_out, k

    def param_shapes(self):
        k = self.k
        return {f"{self.name}.w": (k, k, self.c_in, self.c_out), f"{self.name}.b": (self.c_out,)}

    def init(self, rng: np.random.Generator, zero: bool = False):
        shapes = self.param_shapes()
        wname, bname = shapes
        if zero:
            w = np.zeros(shapes[wname])
        else:
            fan_in = self.k * self.k * self.c_in
            w = rng.standard_normal(shapes[wname]) / np.sqrt(fan_in)
        return {wname: w, bname: np.zeros(shapes[bname])}

    def _cols(self, x):
        p = self.k // 2
        B, H, W, C = x.shape
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (self.k, self.k), axis=(1, 2))  # B,H,W,C,k,k
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, self.k * self.k * C)

    def forward(self, params, x):
        w = params[f"{self.name}.w"].astype(x.dtype, copy=False)
        b = params[f"{self.name}.b"].astype(x.dtype, copy=False)
        B, H, W, _ = x.shape
        cols = self._cols(x)
        y = cols @ w.reshape(-1, self.c_out) + b
        return y.reshape(B, H, W, self.c_out), (cols, x.shape)

    def backward(self, params, cache, g, need_params=True, in_channels=None):
        """``in_channels`` limits the input gradient to the leading channels."""
        cols, xshape = cache
        B, H, W, C = xshape
        w = params[f"{self.name}.w"].astype(g.dtype, copy=False)
        g2 = g.reshape(-1, self.c_out)
        grads = {}
        if need_params:
            grads[f"{self.name}.w"] = (cols.T @ g2).reshape(w.shape)
            grads[f"{self.name}.b"] = g2.sum(axis=0)
        # input gradient = correlation of g with the flipped, transposed kernel
        if in_channels is not None:
            C = in_channels
        w_flip = np.ascontiguousarray(w[::-1, ::-1, :C].transpose(0, 1, 3, 2)).reshape(-1, C)
        dx_ = (self._cols(g) @ w_flip).reshape(B, H, W, C)
        return dx_, grads


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in, self.n_out = n_in, n_out

    def param_shapes(self):
        return {f"{self.name}.w": (self.n_in, self.n_out), f"{self.name}.b": (self.n_out,)}

    def init(self, rng: np.random.Generator, zero: bool = False):
        wname, bname = self.param_shapes()
        w = np.zeros((self.n_in, self.n_out)) if zero else rng.standard_normal((self.n_in, self.n_out)) / np.sqrt(self.n_in)
        return {wname: w, bname: np.zeros(self.n_out)}

    def forward(self, params, x):
        w = params[f"{self.name}.w"].astype(x.dtype, copy=False)
        b = params[f"{self.name}.b"].astype(x.dtype, copy=False)
        return x @ w + b, x

    def backward(self, params, x, g, need_params=True):
        w = params[f"{self.name}.w"].astype(g.dtype, copy=False)
        grads = {}
        if need_params:
            grads[f"{self.name}.w"] = x.T @ g
            grads[f"{self.name}.b"] = g.sum(axis=0)
        return g @ w.T, grads


class Adam:
    """Adaptive-moment optimizer with global gradient-norm clipping."""

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, clip: float | None = 1.0):
        self.lr, self.betas, self.eps, self.clip = lr, betas, eps, clip
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict, grads: dict) -> float:
        """Update ``params`` in place; returns the pre-clip gradient norm."""
        norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in params.items():
            g = grads[name].astype(np.float64) * scale
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm
