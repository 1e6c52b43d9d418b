"""Sampling-cost accounting and sample-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParameterError, ShapeError
from .sampler import SamplerConfig


@dataclass(frozen=True)
class LevelCost:
    resolution: int
    steps: int
    pixel_weighted_nfe: int


@dataclass(frozen=True)
class CostReport:
    """Pixel-weighted evaluation counts. Totals are exact integers."""

    levels: tuple[LevelCost, ...]
    total_pyramidal: int
    total_full: int

    @property
    def speedup(self) -> Fraction:
        return Fraction(self.total_full, self.total_pyramidal)

    @property
    def speedup_ratio(self) -> float:
        return self.total_full / self.total_pyramidal


def nfe_cost(cfg: SamplerConfig, T_full_reference: int) -> CostReport:
    """Cost of ``generate_pyramidal`` against a full reverse run at the finest level.

    Each score evaluation is weighted by its pixel count ``H * W``.
    """
    steps = [cfg.T_f] + [cfg.n_refine] * (len(cfg.ladder) - 1)
    levels = tuple(LevelCost(r, s, s * r * r) for r, s in zip(cfg.ladder, steps))
    total = sum(lc.pixel_weighted_nfe for lc in levels)
    fine = cfg.ladder[-1]
    return CostReport(levels, total, int(T_full_reference) * fine * fine)


def sliced_wasserstein(a, b, n_projections: int = 64, rng: np.random.Generator | None = None) -> float:
    """Mean over random unit directions of the 1-D 2-Wasserstein distance.

    Sample sets are ``(n, ...)`` arrays flattened to ``(n, d)``. Equal-size sets
    use the sorted-match formula; otherwise both projected sets are compared
    on a common grid of quantiles.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ParameterError("sample sets must be nonempty")
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(0) if rng is None else rng
    d = a.shape[1]
    theta = rng.standard_normal((d, n_projections))
    theta /= np.linalg.norm(theta, axis=0, keepdims=True)
    pa = np.sort(a @ theta, axis=0)
    pb = np.sort(b @ theta, axis=0)
    if len(pa) != len(pb):
        n = max(len(pa), len(pb))
        q = (np.arange(n) + 0.5) / n
        pa = np.quantile(pa, q, axis=0)
        pb = np.quantile(pb, q, axis=0)
    w2 = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    return float(np.mean(w2))


def gaussian_moment_error(samples, target, level: int = 0) -> tuple[float, float]:
    """Max-abs errors of the empirical per-pixel mean and variance.

    ``target`` is a :class:`~pyramidal_ddpm.score.GaussianMixtureData`; its
    moments are taken at ``level``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim < 4 or len(samples) == 0:
        raise ParameterError("need a nonempty (n, H, W, C) sample set")
    mean = target.mean(level)
    var = target.variance(level)
    if samples.shape[1:] != mean.shape:
        raise ShapeError(f"samples {samples.shape[1:]} do not match target level shape {mean.shape}")
    mean_err = float(np.max(np.abs(samples.mean(axis=0) - mean)))
    var_err = float(np.max(np.abs(samples.var(axis=0) - var)))
    return mean_err, var_err


def psnr(a, b, data_range: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ParameterError("data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(a, b, data_range: float = 2.0, window: int = 8) -> float:
    """Mean SSIM over all ``window x window`` uniform windows (per channel).

    Images smaller than the window use a single whole-image window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    H, W = a.shape[-3:-1]
    wh, ww = min(window, H), min(window, W)
    from numpy.lib.stride_tricks import sliding_window_view

    wa = sliding_window_view(a, (wh, ww), axis=(-3, -2))
    wb = sliding_window_view(b, (wh, ww), axis=(-3, -2))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(np.mean(s))
