import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdmkit.diffusion import (ancestral_step, ancestral_step_from_gammas, coeffs, coeffs_from_gamma,
                              expm1_error_profile, marginal_sample, posterior_from_gammas, posterior_params,
                              reverse_from_gammas, reverse_model_params, transition_from_gammas,
                              transition_params, transition_sample)
from vdmkit.denoiser import eps_to_x
from vdmkit.errors import OrderingError, ShapeError
from vdmkit.schedule import NoiseSchedule, ScheduleEndpoints

import oracles

LIN = NoiseSchedule("log-snr-linear", ScheduleEndpoints(-10.0, 10.0))
gammas = st.floats(-12.0, 12.0, allow_nan=False)


def gamma_of_alpha_sq(a2):
    return math.log((1 - a2) / a2)


def test_marginal_sample_examples():
    x = np.array([[0.3, -0.7]])
    assert np.allclose(marginal_sample(x, coeffs_from_gamma(-30.0), np.ones_like(x)), x, atol=1e-6)
    eps = np.array([[0.5, -2.0]])
    s = math.sqrt(oracles.sigmoid(1.3))
    assert np.allclose(marginal_sample(np.zeros_like(eps), coeffs_from_gamma(1.3), eps), s * eps, atol=1e-15)
    z = marginal_sample(np.ones((1, 2)), coeffs_from_gamma(0.0), np.zeros((1, 2)))
    assert z == pytest.approx(np.full((1, 2), math.sqrt(0.5)), abs=1e-15)
    with pytest.raises(ShapeError):
        marginal_sample(np.ones((1, 2)), 0.0, np.ones((1, 3)))


def test_transition_examples():
    tp = transition_from_gammas(gamma_of_alpha_sq(0.5), gamma_of_alpha_sq(0.25))
    assert float(tp.alpha_ts) ** 2 == pytest.approx(0.5, abs=1e-14)
    assert float(tp.sigma_sq_ts) == pytest.approx(0.5, abs=1e-14)
    tp = transition_params(LIN, 0.5, 0.5 + 1e-12)
    assert float(tp.alpha_ts) == pytest.approx(1.0, abs=1e-9) and abs(float(tp.sigma_sq_ts)) < 1e-9
    with pytest.raises(OrderingError):
        transition_params(LIN, 0.6, 0.4)


def test_posterior_examples():
    post = posterior_from_gammas(np.zeros((1, 1)), np.zeros((1, 1)), gamma_of_alpha_sq(0.5), gamma_of_alpha_sq(0.25))
    assert float(post.var) == pytest.approx(1 / 3, abs=1e-14)
    z_t, x = np.array([[0.4]]), np.array([[-0.2]])
    near = posterior_params(z_t, x, LIN, 0.5, 0.5 + 1e-12)
    assert float(np.ravel(near.mean)[0]) == pytest.approx(0.4, abs=1e-8) and float(near.var) < 1e-9
    # s at the start of a schedule with a very high max SNR: q(z_s|z_t,x) ~ alpha_s x
    high = NoiseSchedule("log-snr-linear", ScheduleEndpoints(-25.0, 10.0))
    p = posterior_params(z_t, x, high, 0.0, 0.5)
    a_s = math.sqrt(oracles.sigmoid(25.0))
    assert float(np.ravel(p.mean)[0]) == pytest.approx(a_s * -0.2, abs=1e-6)


def test_posterior_matches_bayes_enumeration():
    vals, probs = np.array([-1.0, 0.2, 1.0]), np.array([0.3, 0.5, 0.2])
    grid = np.linspace(-6, 6, 400_001)
    for gs, gt, z_t in [(-2.0, 0.5, 0.3), (-4.0, -1.0, -0.8), (0.0, 3.0, 1.2)]:
        m_true, v_true = oracles.posterior_by_enumeration(z_t, vals, probs, gs, gt, grid)
        # q(z_s|z_t) marginalises x under its posterior given z_t; compare the law of total variance
        a_t, s_t = math.sqrt(oracles.sigmoid(-gt)), math.sqrt(oracles.sigmoid(gt))
        w = probs * np.exp(-0.5 * ((z_t - a_t * vals) / s_t) ** 2)
        w /= w.sum()
        means = np.array([float(np.ravel(posterior_from_gammas(np.array([[z_t]]), np.array([[v]]), gs, gt).mean)[0])
                          for v in vals])
        var = float(posterior_from_gammas(np.array([[z_t]]), np.array([[0.0]]), gs, gt).var)
        m = (w * means).sum()
        v = var + (w * (means - m) ** 2).sum()
        assert m == pytest.approx(m_true, abs=1e-3) and v == pytest.approx(v_true, abs=1e-3)


@settings(max_examples=200, deadline=None)
@given(gammas, gammas)
def test_stable_transition_matches_naive(g1, g2):
    gs, gt = min(g1, g2), max(g1, g2)
    stable = transition_from_gammas(gs, gt)
    naive = transition_from_gammas(gs, gt, stable=False)
    assert abs(float(stable.sigma_sq_ts) - float(naive.sigma_sq_ts)) < 1e-12
    assert float(stable.sigma_sq_ts) >= 0
    _, s2 = oracles.naive_transition(gs, gt)
    assert abs(float(stable.sigma_sq_ts) - s2) < 1e-12


def test_stable_forms_over_time_grid(rng):
    s, t = np.sort(rng.uniform(0, 1, (2, 100)), axis=0)
    gs, gt = LIN.gamma_value(s), LIN.gamma_value(t)
    a = transition_from_gammas(gs, gt)
    b = transition_from_gammas(gs, gt, stable=False)
    assert np.max(np.abs(a.sigma_sq_ts - b.sigma_sq_ts)) < 1e-12
    z_t, x = rng.normal(size=(100, 1)), rng.normal(size=(100, 1))
    post = posterior_from_gammas(z_t, x, gs, gt)
    for k in range(100):
        m, v = oracles.naive_posterior(z_t[k, 0], x[k, 0], gs[k], gt[k])
        assert abs(post.mean[k, 0] - m) < 1e-10 and abs(np.ravel(post.var)[k] - v) < 1e-12


def test_reverse_examples():
    z = np.array([[0.7, -0.1]])
    r = reverse_from_gammas(z, np.array([[0.3, 2.0]]), 1.0, 1.0)
    assert np.array_equal(r.mean, z) and float(r.var) == 0.0
    r = reverse_model_params(z, np.zeros_like(z), LIN, 0.2, 0.6)
    a_s, a_t = math.sqrt(oracles.sigmoid(-LIN.gamma_value(0.2))), math.sqrt(oracles.sigmoid(-LIN.gamma_value(0.6)))
    assert np.allclose(r.mean, a_s / a_t * z, atol=1e-14)


def test_reverse_equals_posterior_with_denoised_x(rng):
    for _ in range(100):
        s, t = np.sort(rng.uniform(0, 1, 2))
        z_t, eps_hat = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        x_hat = eps_to_x(z_t, eps_hat, coeffs(LIN, t))
        r = reverse_model_params(z_t, eps_hat, LIN, s, t)
        p = posterior_params(z_t, x_hat, LIN, s, t)
        assert np.max(np.abs(r.mean - p.mean)) < 1e-10
        assert abs(float(r.var) - float(p.var)) < 1e-12


def test_ancestral_step_examples(rng):
    z = rng.normal(size=(2, 3))
    assert np.array_equal(ancestral_step_from_gammas(z, rng.normal(size=z.shape), 0.5, 0.5, rng.normal(size=z.shape)), z)
    out = ancestral_step(z, np.zeros_like(z), LIN, 0.3, 0.4, np.zeros_like(z))
    ratio = math.sqrt(oracles.sigmoid(-LIN.gamma_value(0.3)) / oracles.sigmoid(-LIN.gamma_value(0.4)))
    assert np.allclose(out, ratio * z, atol=1e-15)
    with pytest.raises(OrderingError):
        ancestral_step(z, z, LIN, 0.4, 0.3, z)


def test_ancestral_step_moments(rng):
    n = 100_000
    z_t = np.full((n, 1), 0.8)
    eps_hat = np.full((n, 1), -0.4)
    out = ancestral_step(z_t, eps_hat, LIN, 0.35, 0.55, rng.standard_normal((n, 1)))
    ref = reverse_model_params(z_t[:1], eps_hat[:1], LIN, 0.35, 0.55)
    m, v = float(ref.mean[0, 0]), float(ref.var)
    assert abs(out.mean() - m) < 3 * math.sqrt(v / n)
    # SE of the sample variance of a Gaussian is v * sqrt(2 / (n - 1))
    assert abs(out.var(ddof=1) - v) < 3 * v * math.sqrt(2 / (n - 1))


def test_markov_marginal_consistency(rng):
    n = 100_000
    x = np.full((n, 1), 0.6)
    gs, gt = LIN.gamma_value(0.3), LIN.gamma_value(0.7)
    z_s = marginal_sample(x, gs, rng.standard_normal((n, 1)))
    z_t = transition_sample(z_s, transition_from_gammas(gs, gt), rng.standard_normal((n, 1)))
    a_t, s2_t = math.sqrt(oracles.sigmoid(-gt)), oracles.sigmoid(gt)
    assert abs(z_t.mean() - a_t * 0.6) < 3 * math.sqrt(s2_t / n)
    assert abs(z_t.var(ddof=1) - s2_t) < 3 * s2_t * math.sqrt(2 / (n - 1))


def test_expm1_profile_shows_naive_error():
    x = np.linspace(-1e-4, 1e-4, 2001)
    naive, stable = expm1_error_profile(x)
    assert naive.max() > 10 * stable.max()
