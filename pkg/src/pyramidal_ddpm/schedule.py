"""Discrete variance schedules for the forward diffusion process.

All schedule arithmetic is carried out in float64. Schedules are frozen after
construction; ``respace`` derives a shorter schedule that keeps the cumulative
signal level ``alpha_bar`` of the parent at uniformly strided steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ParameterError

ScheduleKind = Literal["linear", "cosine"]
SigmaVariant = Literal["beta", "beta_tilde"]

SCHEDULE_KINDS = ("linear", "cosine")
SIGMA_VARIANTS = ("beta", "beta_tilde")

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

_COSINE_OFFSET = 0.008
_MAX_BETA = 0.999


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """A T-step noise schedule.

    Arrays are indexed from 0, so ``beta[t - 1]`` is the one-based
    :math:`\\beta_t`. ``timesteps[t - 1]`` gives the step of the original
    (un-respaced) schedule that step ``t`` corresponds to and ``base_T`` its
    length; networks condition on ``timesteps / base_T`` so that a model trained
    on the base schedule sees consistent noise levels after re-spacing.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    kind: str
    sigma_variant: str
    timesteps: np.ndarray
    base_T: int
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def check_step(self, t: int) -> int:
        if not isinstance(t, (int, np.integer)) or isinstance(t, bool):
            raise ParameterError(f"step index must be an integer, got {t!r}")
        if not 1 <= t <= self.T:
            raise ParameterError(f"step index {t} outside [1, {self.T}]")
        return int(t)

    def alpha_bar_prev(self, t: int) -> float:
        """``alpha_bar`` at step ``t - 1`` with ``alpha_bar_0 = 1``."""
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def noise_level(self, t: int) -> float:
        """Normalized time ``t / T`` of the base schedule, used for conditioning."""
        return float(self.timesteps[t - 1]) / self.base_T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.base_T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_variant": self.sigma_variant,
        }


def _sigma(beta: np.ndarray, alpha_bar: np.ndarray, variant: str) -> np.ndarray:
    if variant == "beta":
        return np.sqrt(beta)
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    return np.sqrt((1.0 - prev) / (1.0 - alpha_bar) * beta)


def _check_variant(sigma_variant: str) -> None:
    if sigma_variant not in SIGMA_VARIANTS:
        raise ParameterError(f"unknown sigma variant {sigma_variant!r}; expected one of {SIGMA_VARIANTS}")


def _build(beta: np.ndarray, kind: str, sigma_variant: str, **kw) -> NoiseSchedule:
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    T = beta.shape[0]
    return NoiseSchedule(
        beta=_readonly(beta),
        alpha=_readonly(alpha),
        alpha_bar=_readonly(alpha_bar),
        sigma=_readonly(_sigma(beta, alpha_bar, sigma_variant)),
        kind=kind,
        sigma_variant=sigma_variant,
        timesteps=_readonly(np.arange(1, T + 1, dtype=np.float64)),
        base_T=T,
        **kw,
    )


def make_schedule(
    kind: str = "linear",
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    sigma_variant: str = "beta",
) -> NoiseSchedule:
    """Build a linear or cosine schedule.

    The cosine profile ignores ``beta_start``/``beta_end`` and clips each
    ``beta_t`` at 0.999.
    """
    if kind not in SCHEDULE_KINDS:
        raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    _check_variant(sigma_variant)
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T!r}")
    T = int(T)

    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ParameterError(
                f"linear schedule needs 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )
        if T == 1:
            beta = np.array([beta_start], dtype=np.float64)
        else:
            steps = np.arange(T, dtype=np.float64) / (T - 1)
            beta = beta_start + steps * (beta_end - beta_start)
    else:
        s = _COSINE_OFFSET
        u = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((u + s) / (1 + s) * math.pi / 2) ** 2
        ab = f / f[0]
        beta = np.minimum(1.0 - ab[1:] / ab[:-1], _MAX_BETA)

    return _build(beta, kind, sigma_variant, beta_start=float(beta_start), beta_end=float(beta_end))


def respaced_indices(T: int, n: int) -> np.ndarray:
    """1-based parent steps kept by a length-``n`` re-spacing: round(i*T/n), i=1..n."""
    i = np.arange(1, n + 1, dtype=np.int64)
    # round half up in integer arithmetic
    return (2 * i * T + n) // (2 * n)


def respace(s: NoiseSchedule, n: int) -> NoiseSchedule:
    """Return an ``n``-step schedule matching ``s.alpha_bar`` at strided steps.

    >>> base = make_schedule("linear", 1000)
    >>> short = respace(base, 100)
    >>> short.alpha_bar[-1] == base.alpha_bar[-1]
    True
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or not 1 <= n <= s.T:
        raise ParameterError(f"respace needs 1 <= n <= {s.T}, got {n!r}")
    n = int(n)
    if n == s.T:
        return s

    idx = respaced_indices(s.T, n)
    alpha_bar = s.alpha_bar[idx - 1].copy()
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    beta = 1.0 - alpha_bar / prev
    alpha = 1.0 - beta
    return NoiseSchedule(
        beta=_readonly(beta),
        alpha=_readonly(alpha),
        alpha_bar=_readonly(alpha_bar),
        sigma=_readonly(_sigma(beta, alpha_bar, s.sigma_variant)),
        kind=s.kind,
        sigma_variant=s.sigma_variant,
        timesteps=_readonly(s.timesteps[idx - 1]),
        base_T=s.base_T,
        beta_start=s.beta_start,
        beta_end=s.beta_end,
    )


def with_sigma_variant(s: NoiseSchedule, sigma_variant: str) -> NoiseSchedule:
    """Copy of ``s`` with the sampling noise recomputed for another variant."""
    _check_variant(sigma_variant)
    return NoiseSchedule(
        beta=s.beta,
        alpha=s.alpha,
        alpha_bar=s.alpha_bar,
        sigma=_readonly(_sigma(np.asarray(s.beta), np.asarray(s.alpha_bar), sigma_variant)),
        kind=s.kind,
        sigma_variant=sigma_variant,
        timesteps=s.timesteps,
        base_T=s.base_T,
        beta_start=s.beta_start,
        beta_end=s.beta_end,
    )


def schedule_from_dict(d: dict) -> NoiseSchedule:
    return make_schedule(
        kind=d.get("kind", "linear"),
        T=d.get("T", DEFAULT_T),
        beta_start=d.get("beta_start", DEFAULT_BETA_START),
        beta_end=d.get("beta_end", DEFAULT_BETA_END),
        sigma_variant=d.get("sigma_variant", "beta"),
    )
