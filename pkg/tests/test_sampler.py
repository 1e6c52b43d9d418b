import numpy as np
import pytest

from pyramidal_ddpm.errors import ParameterError, ShapeError
from pyramidal_ddpm.grid import downsample_array, upsample_array
from pyramidal_ddpm.sampler import (
    affine_contraction_factor,
    forward_diffuse,
    generate_pyramidal,
    guidance_gradient,
    guided_reverse_step,
    make_sampler_config,
    predict_x0,
    refine_steps,
    reverse_step,
    super_resolve_pyramidal,
)
from pyramidal_ddpm.schedule import make_schedule, respace
from pyramidal_ddpm.score import AnalyticScore, make_toy

SCHED = make_schedule()


class ZeroScore:
    def score(self, x, t, schedule, enc=None):
        return np.zeros_like(x)

    def vjp(self, x, t, schedule, enc, v):
        return np.zeros_like(v)


class MinusX(ZeroScore):
    def score(self, x, t, schedule, enc=None):
        return -np.asarray(x)

    def vjp(self, x, t, schedule, enc, v):
        return -np.asarray(v)


def test_refine_steps_floor():
    assert refine_steps(100, 0.3) == 30
    assert refine_steps(100, 0.1) == 10
    assert refine_steps(100, 0.999) == 99
    assert refine_steps(7, 0.5) == 3


def test_forward_diffuse_branches():
    x0 = np.random.default_rng(0).standard_normal((4, 4, 1))
    ab = SCHED.alpha_bar[99]
    np.testing.assert_allclose(forward_diffuse(x0, 100, SCHED, z=np.zeros_like(x0)), np.sqrt(ab) * x0)
    z = np.ones_like(x0)
    np.testing.assert_allclose(forward_diffuse(np.zeros_like(x0), 100, SCHED, z=z), np.sqrt(1 - ab) * z)
    with pytest.raises(ParameterError):
        forward_diffuse(x0, 0, SCHED, z=z)


def test_forward_diffuse_variance():
    x0 = np.full((10000, 2, 2, 1), 0.4)
    t = 250
    x = forward_diffuse(x0, t, SCHED, np.random.default_rng(1))
    var = x.var(axis=0)
    assert np.all(np.abs(var / (1 - SCHED.alpha_bar[t - 1]) - 1) < 0.05)


def test_reverse_step_examples():
    x = np.random.default_rng(2).standard_normal((8, 8, 1))
    t = 40
    a = SCHED.alpha[t - 1]
    z = np.zeros_like(x)
    np.testing.assert_allclose(reverse_step(MinusX(), x, t, SCHED, None, z=z), np.sqrt(a) * x, atol=1e-14)
    np.testing.assert_allclose(reverse_step(ZeroScore(), x, t, SCHED, None, z=z), x / np.sqrt(a))


def test_terminal_step_adds_no_noise():
    x = np.ones((2, 2, 1))
    rng = np.random.default_rng(0)
    out = reverse_step(ZeroScore(), x, 1, SCHED, None, rng)
    np.testing.assert_array_equal(out, x / np.sqrt(SCHED.alpha[0]))
    assert rng.standard_normal() == np.random.default_rng(0).standard_normal()


def test_predict_x0_examples():
    rng = np.random.default_rng(3)
    mu = rng.uniform(-1, 1, (8, 8, 1))
    pm = AnalyticScore(make_toy("point_mass", H=8, mean=mu))
    for t in (1, 17, 500, 1000):
        x = rng.standard_normal((8, 8, 1)) * 2
        np.testing.assert_allclose(predict_x0(pm, x, t, SCHED, None), mu, atol=1e-9)
    x = rng.standard_normal((8, 8, 1))
    ab = SCHED.alpha_bar[199]
    np.testing.assert_allclose(predict_x0(ZeroScore(), x, 200, SCHED, None), x / np.sqrt(ab))
    np.testing.assert_allclose(predict_x0(MinusX(), x, 200, SCHED, None), np.sqrt(ab) * x, atol=1e-14)


def _objective(model, x, t, sched, target, k):
    r = downsample_array(predict_x0(model, x, t, sched, None), k) - target
    return float(np.sum(r**2))


@pytest.mark.parametrize("name", ["two_component", "checkerboard"])
def test_guidance_gradient_matches_finite_differences(name):
    data = make_toy(name, H=8)
    model = AnalyticScore(data)
    rng = np.random.default_rng(7)
    for t in (5, 60):
        x = rng.standard_normal((8, 8, 1))
        target = rng.standard_normal((4, 4, 1)) * 0.3
        grad, _ = guidance_gradient(model, x, t, SCHED, None, target, 1)
        h = 1e-4
        fd = np.zeros(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = h
            e = e.reshape(x.shape)
            fd[i] = (_objective(model, x + e, t, SCHED, target, 1) - _objective(model, x - e, t, SCHED, target, 1)) / (2 * h)
        fd = fd.reshape(x.shape)
        assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-3


def test_guidance_zero_residual_and_lambda_zero():
    mu = np.random.default_rng(0).uniform(-1, 1, (8, 8, 1))
    model = AnalyticScore(make_toy("point_mass", H=8, mean=mu))
    x = np.random.default_rng(1).standard_normal((8, 8, 1))
    grad, resid = guidance_gradient(model, x, 30, SCHED, None, downsample_array(mu), 1)
    assert np.max(np.abs(resid)) < 1e-12 and np.max(np.abs(grad)) < 1e-9
    target = np.zeros((4, 4, 1))
    a = guided_reverse_step(model, x, 30, SCHED, None, target, 1, 0.0, np.random.default_rng(5))
    b = reverse_step(model, x, 30, SCHED, None, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_guided_step_errors():
    model = MinusX()
    x = np.zeros((8, 8, 1))
    with pytest.raises(ShapeError):
        guided_reverse_step(model, x, 3, SCHED, None, np.zeros((2, 2, 1)), 1, 1.0, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        guided_reverse_step(model, x, 3, SCHED, None, np.zeros((4, 4, 1)), 1, -1.0, np.random.default_rng(0))


def test_inexact_guidance_drops_jacobian():
    model = MinusX()
    x = np.random.default_rng(0).standard_normal((8, 8, 1))
    target = np.zeros((4, 4, 1))
    t = 50
    ab = SCHED.alpha_bar[t - 1]
    g_exact, r = guidance_gradient(model, x, t, SCHED, None, target, 1, exact=True)
    g_fast, _ = guidance_gradient(model, x, t, SCHED, None, target, 1, exact=False)
    from pyramidal_ddpm.grid import downsample_adjoint

    base = 2 / np.sqrt(ab) * downsample_adjoint(r)
    np.testing.assert_allclose(g_fast, base)
    np.testing.assert_allclose(g_exact, ab * base, atol=1e-12)


def test_config_validation():
    with pytest.raises(ParameterError):
        make_sampler_config(ladder=(8, 12))
    with pytest.raises(ParameterError):
        make_sampler_config(ladder=(16, 8))
    with pytest.raises(ParameterError):
        make_sampler_config(T_s=5, delta_ts=0.1)
    with pytest.raises(ParameterError):
        make_sampler_config(delta_ts=1.5)
    with pytest.raises(ParameterError):
        make_sampler_config(lam=-1)
    assert make_sampler_config(ladder=(8, 32)).level_factors() == [0, 2]


def test_step_accounting():
    model = AnalyticScore(make_toy("unit_gaussian", H=32))
    cfg = make_sampler_config(T_f=100, T_s=100, delta_ts=0.3, ladder=(8, 16, 32), seed=0)
    res = generate_pyramidal(model, cfg, n_samples=2)
    assert res.steps_per_level() == [100, 30, 30]
    assert res.nfe == 100 + 2 * 30
    assert res.image.data.shape == (2, 32, 32, 1)
    assert [lv.height for lv in res.levels] == [8, 16, 32]
    # no noise at the last step of each run
    assert [r.t for r in res.trace if r.t == 1] == [1, 1, 1]


def test_single_level_is_plain_reverse_diffusion():
    model = AnalyticScore(make_toy("unit_gaussian", H=8))
    cfg = make_sampler_config(T_f=20, ladder=(8,), seed=4)
    res = generate_pyramidal(model, cfg)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 8, 8, 1))
    for t in range(20, 0, -1):
        x = reverse_step(model, x, t, cfg.schedule_f, None, rng)
    np.testing.assert_array_equal(res.image.data, x)


def test_generation_is_deterministic():
    model = AnalyticScore(make_toy("checkerboard", H=16))
    cfg = make_sampler_config(T_f=30, T_s=50, delta_ts=0.2, ladder=(8, 16), seed=9)
    a = generate_pyramidal(model, cfg, 2).image.data
    b = generate_pyramidal(model, cfg, 2).image.data
    assert np.array_equal(a, b)


def test_strict_init_scales_initial_noise():
    model = ZeroScore()
    base = make_schedule("linear", sigma_variant="beta_tilde")
    cfg = make_sampler_config(T_f=1, ladder=(4,), base=base, sigma_variant="beta_tilde", strict_paper_init=True, seed=0)
    # one reverse step at t=1 only rescales, so the output reveals the initial scale
    out = generate_pyramidal(model, cfg).image.data
    x = np.random.default_rng(0).standard_normal((1, 4, 4, 1)) * cfg.schedule_f.sigma[-1]
    np.testing.assert_allclose(out, x / np.sqrt(cfg.schedule_f.alpha[0]))


@pytest.mark.slow
def test_two_level_generation_matches_target_mean():
    data = make_toy("checkerboard", H=16, cell=4, amplitude=0.5, variance=0.05)
    model = AnalyticScore(data)
    cfg = make_sampler_config(T_f=100, T_s=100, delta_ts=0.3, ladder=(8, 16), seed=1)
    res = generate_pyramidal(model, cfg, n_samples=5000)
    assert np.max(np.abs(res.image.data.mean(axis=0) - data.mean(0))) < 0.05


def test_point_mass_levels_converge_to_downsampled_mean():
    mu = make_toy("gaussian_blob", H=32).means[0]
    model = AnalyticScore(make_toy("point_mass", H=32, mean=mu))
    cfg = make_sampler_config(T_f=100, T_s=100, delta_ts=0.3, ladder=(8, 16, 32), seed=2)
    res = generate_pyramidal(model, cfg)
    for k, lv in enumerate(res.levels):
        ref = downsample_array(mu, 2 - k)
        assert np.mean((lv.data[0] - ref) ** 2) < 1e-2


def test_super_resolution_shapes_and_accounting():
    mu = make_toy("gaussian_blob", H=32).means[0]
    model = AnalyticScore(make_toy("point_mass", H=32, mean=mu))
    cfg = make_sampler_config(T_s=100, delta_ts=0.3, ladder=(8, 16, 32), lam=1.0, seed=0)
    lr = downsample_array(mu, 2)
    res = super_resolve_pyramidal(model, cfg, lr)
    assert res.image.data.shape == (32, 32, 1)
    assert res.steps_per_level() == [30, 30]
    assert all(r.residual is not None for r in res.trace)
    assert np.mean((downsample_array(res.image.data, 2) - lr) ** 2) < 1e-2
    with pytest.raises(ShapeError):
        super_resolve_pyramidal(model, cfg, np.zeros((16, 16, 1)))
    skip = make_sampler_config(T_s=100, delta_ts=0.3, ladder=(8, 32), seed=0)
    assert super_resolve_pyramidal(model, skip, lr).steps_per_level() == [30]


def test_super_resolution_lambda_zero_matches_unguided_refinement():
    data = make_toy("checkerboard", H=16)
    model = AnalyticScore(data)
    cfg = make_sampler_config(T_s=50, delta_ts=0.2, ladder=(8, 16), lam=0.0, seed=3)
    lr = downsample_array(data.means[0])
    out = super_resolve_pyramidal(model, cfg, lr).image.data
    rng = np.random.default_rng(3)
    x = forward_diffuse(upsample_array(lr), 10, cfg.schedule_s, rng)
    for t in range(10, 0, -1):
        x = reverse_step(model, x, t, cfg.schedule_s, None, rng)
    assert np.array_equal(out, x)


def test_contraction_factor_matches_shared_noise_pairs():
    sched = respace(SCHED, 100)
    data = make_toy("two_component", H=8, offset=0.0, variance=0.3)
    model = AnalyticScore(data)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 8, 1))
    delta = 0.1 * rng.standard_normal(x.shape)
    a, b = x.copy(), x + delta
    for t in range(30, 0, -1):
        z = rng.standard_normal(x.shape)
        a = reverse_step(model, a, t, sched, None, z=z)
        b = reverse_step(model, b, t, sched, None, z=z)
    ratio = np.linalg.norm(b - a) / np.linalg.norm(delta)
    assert ratio == pytest.approx(affine_contraction_factor(0.3, sched, 30), rel=1e-6)
    assert ratio < 1
