import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pyramidal_ddpm.errors import ParameterError
from pyramidal_ddpm.schedule import NoiseSchedule, make_schedule, respace, respaced_indices, with_sigma_variant


def test_linear_two_steps():
    s = make_schedule("linear", 2, 0.1, 0.2, "beta")
    np.testing.assert_allclose(s.beta, [0.1, 0.2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.alpha, [0.9, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.sigma, [math.sqrt(0.1), math.sqrt(0.2)], rtol=0, atol=1e-15)


def test_single_step():
    s = make_schedule("linear", 1, 0.1, 0.1)
    assert s.T == 1
    np.testing.assert_allclose(s.beta, [0.1])
    np.testing.assert_allclose(s.alpha_bar, [0.9])


def test_default_terminal_alpha_bar_matches_brute_force_product():
    s = make_schedule("linear", 1000, 1e-4, 0.02)
    prod = 1.0
    for t in range(1, 1001):
        prod *= 1.0 - (1e-4 + (t - 1) / 999 * (0.02 - 1e-4))
    assert s.alpha_bar[-1] == pytest.approx(prod, rel=1e-12)
    assert s.alpha_bar[-1] == pytest.approx(4.04e-5, rel=0.01)


def test_beta_tilde_first_sigma_is_zero():
    s = make_schedule("linear", 10, 1e-3, 0.05, "beta_tilde")
    assert s.sigma[0] == 0.0
    ab = s.alpha_bar
    expect = np.sqrt((1 - ab[3]) / (1 - ab[4]) * s.beta[4])
    assert s.sigma[4] == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=0),
        dict(T=10, beta_start=0.0),
        dict(T=10, beta_start=0.2, beta_end=0.1),
        dict(T=10, beta_end=1.0),
        dict(kind="quadratic"),
        dict(sigma_variant="learned"),
    ],
)
def test_invalid_parameters(kwargs):
    with pytest.raises(ParameterError):
        make_schedule(**kwargs)


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_invariants(kind):
    s = make_schedule(kind, 1000)
    assert np.all(s.beta > 0) and np.all(s.beta < 1)
    assert np.all(np.diff(s.alpha_bar) < 0)
    recon = np.cumprod(1.0 - s.beta)
    assert np.max(np.abs(recon - s.alpha_bar) / s.alpha_bar) < 1e-12
    # exact recurrence
    assert np.array_equal(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:])


def test_cosine_clips_beta():
    s = make_schedule("cosine", 1000)
    assert s.beta.max() <= 0.999


def test_respace_hand_example():
    base = NoiseSchedule(
        beta=np.array([0.1, 0.2, 0.2, 0.2]),
        alpha=np.array([0.9, 0.8, 0.8, 0.8]),
        alpha_bar=np.array([0.9, 0.72, 0.576, 0.4608]),
        sigma=np.sqrt([0.1, 0.2, 0.2, 0.2]),
        kind="linear",
        sigma_variant="beta",
        timesteps=np.arange(1.0, 5.0),
        base_T=4,
    )
    short = respace(base, 2)
    assert list(respaced_indices(4, 2)) == [2, 4]
    np.testing.assert_array_equal(short.alpha_bar, [0.72, 0.4608])
    np.testing.assert_allclose(short.beta, [0.28, 1 - 0.4608 / 0.72], atol=1e-15)
    assert short.beta[1] == pytest.approx(0.36)
    np.testing.assert_array_equal(short.timesteps, [2.0, 4.0])


def test_respace_identity():
    s = make_schedule()
    r = respace(s, s.T)
    assert np.array_equal(r.beta, s.beta)
    assert np.array_equal(r.alpha, s.alpha)
    assert np.array_equal(r.alpha_bar, s.alpha_bar)


def test_respace_keeps_terminal_level():
    s = make_schedule("linear", 1000, 1e-4, 0.02)
    r = respace(s, 100)
    assert r.T == 100
    assert r.alpha_bar[-1] == s.alpha_bar[999]
    assert r.timesteps[-1] == 1000 and r.base_T == 1000
    assert r.noise_level(100) == 1.0


@pytest.mark.parametrize("n", [0, 1001, -3])
def test_respace_rejects_bad_lengths(n):
    with pytest.raises(ParameterError):
        respace(make_schedule(), n)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 400), data=st.data())
def test_respace_preserves_alpha_bar_exactly(T, data):
    n = data.draw(st.integers(1, T))
    s = make_schedule("linear", T, 1e-4, 0.05)
    r = respace(s, n)
    idx = respaced_indices(T, n)
    assert idx[-1] == T
    assert np.all(np.diff(idx) > 0)
    assert np.array_equal(r.alpha_bar, s.alpha_bar[idx - 1])
    recon = np.cumprod(1.0 - r.beta)
    assert np.max(np.abs(recon - r.alpha_bar) / r.alpha_bar) < 1e-12
    assert np.all(np.diff(r.alpha_bar) < 0)


def test_sigma_variant_switch():
    s = make_schedule("linear", 50)
    t = with_sigma_variant(s, "beta_tilde")
    assert t.sigma[0] == 0 and np.array_equal(t.alpha_bar, s.alpha_bar)


def test_check_step():
    s = make_schedule("linear", 5)
    assert s.check_step(5) == 5
    for bad in (0, 6, 2.0):
        with pytest.raises(ParameterError):
            s.check_step(bad)
