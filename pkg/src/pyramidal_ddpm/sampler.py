"""Forward diffusion, ancestral reverse steps and the two pyramidal samplers.

Images are ``(..., H, W, C)`` arrays; a leading batch axis runs independent
trajectories in lockstep. Score models are any object exposing
``score(x_t, t, schedule, enc)`` and ``vjp(x_t, t, schedule, enc, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError
from .grid import (
    DEFAULT_PE_DEGREE,
    ImageGrid,
    PositionalEncoding,
    downsample2x,
    downsample_adjoint,
    downsample_array,
    make_coordinates,
    upsample2x,
)
from .schedule import NoiseSchedule, make_schedule, respace


def refine_steps(T_s: int, delta_ts: float) -> int:
    """``floor(T_s * delta_ts)``, robust to binary rounding of ``delta_ts``."""
    return math.floor(round(T_s * delta_ts, 9))


def _log2_ratio(a: int, b: int) -> int:
    ratio, rem = divmod(b, a)
    if rem or ratio < 2 or ratio & (ratio - 1):
        raise ParameterError(f"ladder step {a} -> {b} is not a power-of-two upscaling")
    return ratio.bit_length() - 1


@dataclass
class SamplerConfig:
    """Step counts, schedules and guidance settings for pyramidal sampling.

    ``ladder`` lists square resolutions coarse to fine. Consecutive entries
    normally differ by 2x; larger power-of-two jumps are allowed so that
    skip-level ablations (e.g. 8 -> 32) can be expressed.
    """

    T_f: int
    T_s: int
    delta_ts: float
    ladder: tuple[int, ...]
    schedule_f: NoiseSchedule
    schedule_s: NoiseSchedule
    lam: float = 1.0
    sigma_variant: str = "beta"
    seed: int = 0
    channels: int = 1
    pe_degree: int = DEFAULT_PE_DEGREE
    strict_paper_init: bool = False
    exact_guidance: bool = True

    def __post_init__(self):
        self.ladder = tuple(int(r) for r in self.ladder)
        self.validate()

    @property
    def n_refine(self) -> int:
        return refine_steps(self.T_s, self.delta_ts)

    def validate(self) -> None:
        if not self.ladder:
            raise ParameterError("resolution ladder is empty")
        if self.ladder[0] < 1:
            raise ParameterError(f"ladder resolutions must be positive, got {self.ladder}")
        for a, b in zip(self.ladder, self.ladder[1:]):
            if b <= a:
                raise ParameterError(f"ladder must be strictly increasing, got {self.ladder}")
            _log2_ratio(a, b)
        if not 0.0 < self.delta_ts <= 1.0:
            raise ParameterError(f"delta_ts must lie in (0, 1], got {self.delta_ts}")
        if self.T_f < 1 or self.T_s < 1:
            raise ParameterError("T_f and T_s must be positive")
        if len(self.ladder) > 1 and self.n_refine < 1:
            raise ParameterError(f"floor(T_s * delta_ts) = {self.n_refine}; need at least one refinement step")
        if self.schedule_f.T != self.T_f:
            raise ParameterError(f"schedule_f has {self.schedule_f.T} steps, T_f = {self.T_f}")
        if self.schedule_s.T != self.T_s:
            raise ParameterError(f"schedule_s has {self.schedule_s.T} steps, T_s = {self.T_s}")
        if self.lam < 0:
            raise ParameterError(f"guidance weight must be >= 0, got {self.lam}")

    def level_factors(self) -> list[int]:
        """Number of 2x upsamplings entering each ladder level (0 for the coarsest)."""
        return [0] + [_log2_ratio(a, b) for a, b in zip(self.ladder, self.ladder[1:])]


def make_sampler_config(
    T_f: int = 1000,
    T_s: int = 100,
    delta_ts: float = 0.3,
    ladder=(8, 16, 32),
    lam: float = 1.0,
    base: NoiseSchedule | None = None,
    schedule_s: NoiseSchedule | None = None,
    sigma_variant: str = "beta",
    **kw,
) -> SamplerConfig:
    """Build a config whose full and scaled schedules re-space ``base``.

    ``base`` defaults to the 1000-step linear schedule; pass ``schedule_s`` to
    use an independently constructed scaled schedule instead.
    """
    if base is None:
        base = make_schedule("linear", sigma_variant=sigma_variant)
    elif base.sigma_variant != sigma_variant:
        from .schedule import with_sigma_variant

        base = with_sigma_variant(base, sigma_variant)
    sched_f = respace(base, T_f)
    sched_s = respace(base, T_s) if schedule_s is None else schedule_s
    return SamplerConfig(
        T_f=T_f, T_s=T_s, delta_ts=delta_ts, ladder=tuple(ladder), schedule_f=sched_f, schedule_s=sched_s,
        lam=lam, sigma_variant=sigma_variant, **kw,
    )


@dataclass
class TraceRecord:
    level: int
    phase: str
    t: int
    nfe: int
    residual: float | None = None


@dataclass
class PyramidResult:
    image: ImageGrid
    levels: list[ImageGrid]
    trace: list[TraceRecord] = field(default_factory=list)

    def steps_per_level(self) -> list[int]:
        counts: dict[int, int] = {}
        for rec in self.trace:
            counts[rec.level] = counts.get(rec.level, 0) + 1
        return [counts[k] for k in sorted(counts)]

    @property
    def nfe(self) -> int:
        return len(self.trace)


# --- single steps --------------------------------------------------------------


def forward_diffuse(x0, t: int, schedule: NoiseSchedule, rng: np.random.Generator | None = None, z=None):
    """Sample ``q(x_t | x0)``; pass ``z`` to make the draw deterministic."""
    schedule.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    if z is None:
        if rng is None:
            raise ParameterError("forward_diffuse needs either rng or z")
        z = rng.standard_normal(x0.shape)
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z


def _step_from_score(x_t, score, t, schedule, rng, z):
    a = schedule.alpha[t - 1]
    mean = (x_t + (1.0 - a) * score) / np.sqrt(a)
    if t == 1:
        return mean
    if z is None:
        z = rng.standard_normal(x_t.shape)
    return mean + schedule.sigma[t - 1] * z


def reverse_step(model, x_t, t: int, schedule: NoiseSchedule, enc, rng: np.random.Generator | None = None, z=None):
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    return _step_from_score(x_t, model.score(x_t, t, schedule, enc), t, schedule, rng, z)


def _x0_from_score(x_t, score, t, schedule):
    ab = schedule.alpha_bar[t - 1]
    return (x_t + (1.0 - ab) * score) / np.sqrt(ab)


def predict_x0(model, x_t, t: int, schedule: NoiseSchedule, enc):
    """Denoised estimate ``(x_t + (1 - abar_t) s) / sqrt(abar_t)``."""
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    return _x0_from_score(x_t, model.score(x_t, t, schedule, enc), t, schedule)


def _check_target(x_t: np.ndarray, target: np.ndarray, levels: int) -> None:
    H, W = x_t.shape[-3:-1]
    if H % (1 << levels) or W % (1 << levels):
        raise ShapeError(f"{H}x{W} image cannot be downsampled {levels} times")
    expect = (H >> levels, W >> levels, x_t.shape[-1])
    if tuple(target.shape[-3:]) != expect:
        raise ShapeError(f"low-resolution target {target.shape[-3:]} does not match {expect}")


def guidance_gradient(model, x_t, t, schedule, enc, lr_target, D_levels: int, exact: bool = True, score=None):
    """Gradient of ``|D x0_hat(x_t) - lr_target|^2`` w.r.t. ``x_t`` and the residual.

    Uses ``(2 / sqrt(abar)) (I + (1 - abar) ds/dx)^T D^T r``; with
    ``exact=False`` the score Jacobian term is dropped.
    Returns ``(gradient, residual)`` where ``residual = D x0_hat - lr_target``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    lr_target = np.asarray(lr_target, dtype=np.float64)
    _check_target(x_t, lr_target, D_levels)
    if score is None:
        score = model.score(x_t, t, schedule, enc)
    ab = schedule.alpha_bar[t - 1]
    resid = downsample_array(_x0_from_score(x_t, score, t, schedule), D_levels) - lr_target
    u = downsample_adjoint(resid, D_levels)
    if exact:
        u = u + (1.0 - ab) * model.vjp(x_t, t, schedule, enc, u)
    return (2.0 / np.sqrt(ab)) * u, resid


def guided_reverse_step(
    model,
    x_t,
    t: int,
    schedule: NoiseSchedule,
    enc,
    lr_target,
    D_levels: int,
    lam: float,
    rng: np.random.Generator | None = None,
    z=None,
    exact: bool = True,
    return_residual: bool = False,
):
    """Ancestral step followed by ``x_{t-1} -= lam * grad |D x0_hat(x_t) - lr_target|^2``."""
    if lam < 0:
        raise ParameterError(f"guidance weight must be >= 0, got {lam}")
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    lr_target = np.asarray(lr_target, dtype=np.float64)
    _check_target(x_t, lr_target, D_levels)
    score = model.score(x_t, t, schedule, enc)
    x_prev = _step_from_score(x_t, score, t, schedule, rng, z)
    resid = None
    if lam > 0:
        grad, resid = guidance_gradient(model, x_t, t, schedule, enc, lr_target, D_levels, exact, score=score)
        x_prev = x_prev - lam * grad
    elif return_residual:
        resid = downsample_array(_x0_from_score(x_t, score, t, schedule), D_levels) - lr_target
    if return_residual:
        return x_prev, resid
    return x_prev


# --- pyramidal samplers ------------------------------------------------------------


def _encoding(model, g: ImageGrid, cfg: SamplerConfig) -> PositionalEncoding | None:
    net_cfg = getattr(model, "cfg", None)
    L = getattr(net_cfg, "L", cfg.pe_degree)
    if L == 0:
        return None
    return g.encoding(L)


def coarse_coordinates(cfg: SamplerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of the coarsest level: the finest full-frame grid block-averaged down.

    These are the coordinate values training sees at that level.
    """
    fine = cfg.ladder[-1]
    ci, cj = make_coordinates(fine, fine)
    g = ImageGrid(np.zeros((fine, fine, 1)), ci, cj)
    while g.height > cfg.ladder[0]:
        g = downsample2x(g)
    return g.coord_i, g.coord_j


def _check_finite(x, t, level):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values after reverse step t={t} at resolution {level}", step=t, level=level)


def _upsample(g: ImageGrid, times: int) -> ImageGrid:
    for _ in range(times):
        g = upsample2x(g)
    return g


def run_reverse(model, x, schedule, enc, rng, t_start, level, trace, phase, guidance=None):
    """Reverse steps ``t_start .. 1`` appending one trace record per score evaluation.

    ``guidance`` is ``(lr_target, D_levels, lam, exact)`` or ``None``.
    """
    for t in range(t_start, 0, -1):
        resid = None
        if guidance is None:
            x = reverse_step(model, x, t, schedule, enc, rng)
        else:
            target, k, lam, exact = guidance
            x, r = guided_reverse_step(model, x, t, schedule, enc, target, k, lam, rng, exact=exact,
                                       return_residual=True)
            resid = float(np.sqrt(np.mean(np.sum(r.reshape(r.shape[: r.ndim - 3] + (-1,)) ** 2, axis=-1))))
        _check_finite(x, t, level)
        trace.append(TraceRecord(level, phase, t, len(trace) + 1, resid))
    return x


def generate_pyramidal(model, cfg: SamplerConfig, n_samples: int = 1, rng: np.random.Generator | None = None):
    """Coarse-to-fine generation: full reverse run at the coarsest level, then
    upsample, re-noise to ``floor(T_s * delta_ts)`` and run the scaled reverse
    process at each finer level.

    Returns a :class:`PyramidResult` with data shaped ``(n_samples, H, W, C)``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    r0 = cfg.ladder[0]
    ci, cj = coarse_coordinates(cfg)
    std = cfg.schedule_f.sigma[-1] if cfg.strict_paper_init else 1.0
    x = std * rng.standard_normal((n_samples, r0, r0, cfg.channels))
    g = ImageGrid(x, ci, cj)
    trace: list[TraceRecord] = []

    x = run_reverse(model, x, cfg.schedule_f, _encoding(model, g, cfg), rng, cfg.T_f, r0, trace, "full")
    g = g.with_data(x)
    levels = [g]
    for res, ups in zip(cfg.ladder[1:], cfg.level_factors()[1:]):
        g = _upsample(g, ups)
        t0 = cfg.n_refine
        x = forward_diffuse(g.data, t0, cfg.schedule_s, rng)
        x = run_reverse(model, x, cfg.schedule_s, _encoding(model, g, cfg), rng, t0, res, trace, "refine")
        g = g.with_data(x)
        levels.append(g)
    return PyramidResult(g, levels, trace)


def super_resolve_pyramidal(model, cfg: SamplerConfig, lr_input, rng: np.random.Generator | None = None):
    """Guided coarse-to-fine super-resolution from a coarsest-level image.

    Every refinement step is pulled towards the original low-resolution input,
    compared after block-averaging down to its resolution. There is no full
    reverse run: the upsampled input initializes the first refinement level.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    data = lr_input.data if isinstance(lr_input, ImageGrid) else np.asarray(lr_input, dtype=np.float64)
    r0 = cfg.ladder[0]
    if data.shape[-3:-1] != (r0, r0):
        raise ShapeError(f"input resolution {data.shape[-3]}x{data.shape[-2]} is not the ladder's coarsest {r0}x{r0}")
    ci, cj = coarse_coordinates(cfg)
    g = ImageGrid(data, ci, cj)
    target = data
    levels = [g]
    trace: list[TraceRecord] = []
    k_total = 0
    for res, ups in zip(cfg.ladder[1:], cfg.level_factors()[1:]):
        k_total += ups
        g = _upsample(g, ups)
        t0 = cfg.n_refine
        x = forward_diffuse(g.data, t0, cfg.schedule_s, rng)
        guidance = (target, k_total, cfg.lam, cfg.exact_guidance)
        x = run_reverse(model, x, cfg.schedule_s, _encoding(model, g, cfg), rng, t0, res, trace, "sr", guidance)
        g = g.with_data(x)
        levels.append(g)
    return PyramidResult(g, levels, trace)


def affine_contraction_factor(variance: float, schedule: NoiseSchedule, t_start: int, t_stop: int = 1) -> float:
    """Exact shrink factor of a perturbation under shared-noise reverse steps
    ``t_start .. t_stop`` for a single isotropic Gaussian with clean-data
    per-pixel ``variance`` (0 for a point mass).

    Each step maps ``delta -> (1 - (1 - alpha_t) / v_t) / sqrt(alpha_t) * delta``
    with ``v_t = abar_t * variance + 1 - abar_t``.
    """
    f = 1.0
    for t in range(t_start, t_stop - 1, -1):
        a = schedule.alpha[t - 1]
        ab = schedule.alpha_bar[t - 1]
        v = ab * variance + 1.0 - ab
        f *= abs(1.0 - (1.0 - a) / v) / np.sqrt(a)
    return f
