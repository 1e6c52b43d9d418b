"""Exact scores of diffused isotropic Gaussian mixtures.

If the clean data is ``x0 ~ sum_k w_k N(mu_k, s_k I)`` at the finest
resolution, block averaging ``l`` times gives ``sum_k w_k N(D^l mu_k, s_k/4^l I)``
and the forward process at step ``t`` turns each component into
``N(sqrt(abar) mu, (abar s + 1 - abar) I)``. Scores and their Jacobians then
follow in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from ..grid import downsample_array, resize_levels
from ..schedule import NoiseSchedule


@dataclass(frozen=True, eq=False)
class GaussianMixtureData:
    """Mixture of isotropic Gaussians over ``(H, W, C)`` images.

    Args:
        weights: ``(K,)`` non-negative, summing to one.
        means: ``(K, H, W, C)`` component means at the finest resolution.
        variances: ``(K,)`` per-pixel variances; 0 gives a point mass.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    name: str = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.ndim != 4 or v.shape != w.shape or m.shape[0] != w.shape[0]:
            raise ShapeError(f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, variances {v.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"mixture weights must be non-negative and sum to 1, got {w}")
        if np.any(v < 0):
            raise ParameterError("component variances must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.means.shape[1:]

    def level_of(self, shape) -> int:
        """Ladder level (number of 2x halvings) for an image of footprint ``shape[-3:]``."""
        H, W, C = shape[-3:]
        fH, fW, fC = self.resolution
        if C != fC:
            raise ShapeError(f"image has {C} channels, data has {fC}")
        try:
            level = resize_levels(fH, H)
        except ParameterError as exc:
            raise ShapeError(str(exc)) from None
        if fW != W << level:
            raise ShapeError(f"image footprint {H}x{W} is not a 2x level of {fH}x{fW}")
        return level

    def level_moments(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Component means and per-pixel variances after ``level`` block averagings."""
        return downsample_array(self.means, level), self.variances / 4.0**level

    def mean(self, level: int = 0) -> np.ndarray:
        mu, _ = self.level_moments(level)
        return np.tensordot(self.weights, mu, axes=1)

    def variance(self, level: int = 0) -> np.ndarray:
        """Per-pixel marginal variance at ``level``."""
        mu, s = self.level_moments(level)
        second = np.tensordot(self.weights, mu**2 + s[:, None, None, None], axes=1)
        return second - self.mean(level) ** 2

    def sample(self, n: int, rng: np.random.Generator, level: int = 0) -> np.ndarray:
        mu, s = self.level_moments(level)
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n,) + mu.shape[1:])
        return mu[k] + np.sqrt(s[k])[:, None, None, None] * z


def _marginal(data: GaussianMixtureData, level: int, t: int, schedule: NoiseSchedule):
    schedule.check_step(t)
    ab = float(schedule.alpha_bar[t - 1])
    mu, s = data.level_moments(level)
    centers = np.sqrt(ab) * mu.reshape(mu.shape[0], -1)
    var = ab * s + (1.0 - ab)
    return centers, var


def _component_terms(data, level, x, t, schedule):
    lead = x.shape[:-3]
    centers, var = _marginal(data, level, t, schedule)
    flat = x.reshape((-1, centers.shape[1]))
    diff = flat[:, None, :] - centers[None, :, :]
    d2 = np.einsum("bkn,bkn->bk", diff, diff)
    N = centers.shape[1]
    with np.errstate(divide="ignore"):
        logw = np.log(data.weights)
    logp = logw - 0.5 * d2 / var - 0.5 * N * np.log(var)
    logp -= logp.max(axis=1, keepdims=True)
    r = np.exp(logp)
    r /= r.sum(axis=1, keepdims=True)
    g = -diff / var[None, :, None]
    return lead, r, g, var


def _check_level(data: GaussianMixtureData, level: int, x: np.ndarray) -> None:
    if x.ndim < 3 or data.level_of(x.shape) != level:
        raise ShapeError(f"image shape {x.shape[-3:]} does not match ladder level {level}")


def responsibilities(data: GaussianMixtureData, level: int, x_t: np.ndarray, t: int, schedule: NoiseSchedule):
    """Posterior component probabilities, shape ``(..., K)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_level(data, level, x_t)
    lead, r, _, _ = _component_terms(data, level, x_t, t, schedule)
    return r.reshape(lead + (r.shape[1],))


def analytic_score(data: GaussianMixtureData, level: int, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_level(data, level, x_t)
    _, r, g, _ = _component_terms(data, level, x_t, t, schedule)
    return np.einsum("bk,bkn->bn", r, g).reshape(x_t.shape)


def analytic_vjp(data: GaussianMixtureData, level: int, x_t, t: int, schedule: NoiseSchedule, v) -> np.ndarray:
    """``v^T J`` for the exact (symmetric) Jacobian ``J`` of :func:`analytic_score`.

    ``J = -sum_k r_k I / v_k + sum_k r_k (g_k - gbar)(g_k - gbar)^T``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x_t.shape:
        raise ShapeError(f"cotangent shape {v.shape} != input shape {x_t.shape}")
    _check_level(data, level, x_t)
    _, r, g, var = _component_terms(data, level, x_t, t, schedule)
    vf = v.reshape(g.shape[0], -1)
    gbar = np.einsum("bk,bkn->bn", r, g)
    dg = g - gbar[:, None, :]
    proj = np.einsum("bkn,bn->bk", dg, vf)
    out = -(r / var).sum(axis=1, keepdims=True) * vf + np.einsum("bk,bkn->bn", r * proj, dg)
    return out.reshape(x_t.shape)


class AnalyticScore:
    """Score model backed by the closed-form mixture score.

    The ladder level is inferred from the input footprint; positional
    encodings are accepted and ignored.
    """

    def __init__(self, data: GaussianMixtureData):
        self.data = data

    def score(self, x_t, t, schedule, enc=None):
        x_t = np.asarray(x_t, dtype=np.float64)
        return analytic_score(self.data, self.data.level_of(x_t.shape), x_t, t, schedule)

    def vjp(self, x_t, t, schedule, enc, v):
        x_t = np.asarray(x_t, dtype=np.float64)
        return analytic_vjp(self.data, self.data.level_of(x_t.shape), x_t, t, schedule, v)
