"""Gaussian algebra of the forward process, its posterior and the reverse model.

All formulas are written in terms of gamma = -log SNR so that the numerically
hazardous differences go through ``expm1``/``softplus``.  The functions accept
numpy arrays or autodiff tensors; the same code therefore backs the loss graphs
and the samplers/codec.

Times ``s``/``t`` may be scalars or arrays with one entry per batch row; a
batched gamma is broadcast against the trailing data dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvariantViolation, OrderingError, ShapeError
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class DiffusionCoeffs:
    gamma: np.ndarray
    alpha_sq: np.ndarray
    sigma_sq: np.ndarray
    t: np.ndarray

    @property
    def alpha(self):
        return np.sqrt(self.alpha_sq)

    @property
    def sigma(self):
        return np.sqrt(self.sigma_sq)


@dataclass(frozen=True)
class TransitionParams:
    alpha_ts: object
    sigma_sq_ts: object


@dataclass(frozen=True)
class GaussianParams:
    mean: object
    var: object


def coeffs_from_gamma(g, t=np.nan) -> DiffusionCoeffs:
    g = np.asarray(ad.value_of(g), dtype=float)
    return DiffusionCoeffs(g, ad.sigmoid(-g), ad.sigmoid(g), np.asarray(t, dtype=float))


def coeffs(schedule: NoiseSchedule, t) -> DiffusionCoeffs:
    return coeffs_from_gamma(schedule.gamma_value(t), t)


def bcast(g, like):
    """Reshape a per-row gamma (shape (k,)) to broadcast against ``like`` (k, ...)."""
    gv = ad.value_of(g)
    nd = np.ndim(ad.value_of(like))
    if np.ndim(gv) == 0 or np.ndim(gv) >= nd:
        return g
    shape = np.shape(gv) + (1,) * (nd - np.ndim(gv))
    return ad.reshape(g, shape) if isinstance(g, ad.Tensor) else np.reshape(gv, shape)


def alpha_sigma(g):
    """(alpha, sigma) = (sqrt(sigmoid(-gamma)), sqrt(sigmoid(gamma)))."""
    return ad.sqrt(ad.sigmoid(ad.neg(g))), ad.sqrt(ad.sigmoid(g))


def marginal_sample(x, c: DiffusionCoeffs | object, eps):
    """z_t = alpha_t x + sigma_t eps.  ``c`` is a DiffusionCoeffs or a gamma value/tensor."""
    if np.shape(ad.value_of(x)) != np.shape(ad.value_of(eps)):
        raise ShapeError(f"x {np.shape(ad.value_of(x))} vs eps {np.shape(ad.value_of(eps))}")
    g = c.gamma if isinstance(c, DiffusionCoeffs) else c
    g = bcast(g, x)
    a, s = alpha_sigma(g)
    return a * x + s * eps


def _check_order(s, t):
    sv, tv = np.asarray(ad.value_of(s)), np.asarray(ad.value_of(t))
    if np.any(sv >= tv):
        raise OrderingError("need s < t")


def transition_from_gammas(gs, gt, stable: bool = True) -> TransitionParams:
    """alpha_{t|s} and sigma^2_{t|s} for q(z_t | z_s)."""
    alpha_ts_sq = ad.exp(ad.softplus(gs) - ad.softplus(gt))
    if stable:
        sigma_sq_ts = ad.neg(ad.expm1(ad.softplus(gs) - ad.softplus(gt)))
    else:
        sigma_sq_ts = ad.sigmoid(gt) - alpha_ts_sq * ad.sigmoid(gs)
    return TransitionParams(ad.sqrt(alpha_ts_sq), sigma_sq_ts)


def transition_params(schedule: NoiseSchedule, s, t, stable: bool = True) -> TransitionParams:
    _check_order(s, t)
    return transition_from_gammas(schedule.gamma_value(s), schedule.gamma_value(t), stable)


def transition_sample(z_s, tp: TransitionParams, eps):
    return tp.alpha_ts * z_s + ad.sqrt(tp.sigma_sq_ts) * eps


def posterior_from_gammas(z_t, x, gs, gt) -> GaussianParams:
    """q(z_s | z_t, x) as a Bayesian update of q(z_s|x) by q(z_t|z_s)."""
    gs, gt = bcast(gs, z_t), bcast(gt, z_t)
    tp = transition_from_gammas(gs, gt)
    sig_s2, sig_t2 = ad.sigmoid(gs), ad.sigmoid(gt)
    alpha_s = ad.sqrt(ad.sigmoid(ad.neg(gs)))
    mean = (tp.alpha_ts * sig_s2 / sig_t2) * z_t + (alpha_s * tp.sigma_sq_ts / sig_t2) * x
    var = tp.sigma_sq_ts * sig_s2 / sig_t2
    return GaussianParams(mean, var)


def posterior_params(z_t, x, schedule: NoiseSchedule, s, t) -> GaussianParams:
    _check_order(s, t)
    return posterior_from_gammas(z_t, x, schedule.gamma_value(s), schedule.gamma_value(t))


def reverse_from_gammas(z_t, eps_hat, gs, gt) -> GaussianParams:
    """p(z_s | z_t) for the noise-prediction parameterisation."""
    gs, gt = bcast(gs, z_t), bcast(gt, z_t)
    em = ad.expm1(gs - gt)
    a_s, _ = alpha_sigma(gs)
    a_t, s_t = alpha_sigma(gt)
    mean = (a_s / a_t) * (z_t + s_t * em * eps_hat)
    var = ad.sigmoid(gs) * ad.neg(em)
    return GaussianParams(mean, var)


def reverse_model_params(z_t, eps_hat, schedule: NoiseSchedule, s, t) -> GaussianParams:
    _check_order(s, t)
    return reverse_from_gammas(z_t, eps_hat, schedule.gamma_value(s), schedule.gamma_value(t))


def ancestral_step_from_gammas(z_t, eps_hat, gs, gt, noise):
    gs, gt = bcast(gs, z_t), bcast(gt, z_t)
    c = -np.expm1(gs - gt)
    a_s2, a_t2 = ad.sigmoid(-gs), ad.sigmoid(-gt)
    sig_t = np.sqrt(ad.sigmoid(gt))
    radicand = (1.0 - a_s2) * c
    if np.any(radicand < 0):
        raise InvariantViolation("negative variance in ancestral step")
    return np.sqrt(a_s2 / a_t2) * (z_t - sig_t * c * eps_hat) + np.sqrt(radicand) * noise


def ancestral_step(z_t, eps_hat, schedule: NoiseSchedule, s, t, noise):
    _check_order(s, t)
    return ancestral_step_from_gammas(np.asarray(z_t), np.asarray(eps_hat), schedule.gamma_value(s),
                                      schedule.gamma_value(t), np.asarray(noise))


def gaussian_kl_equal_var(mean_q, mean_p, var):
    """KL(N(mean_q, var I) || N(mean_p, var I)) summed over the last axis."""
    return np.sum((np.asarray(mean_q) - np.asarray(mean_p)) ** 2, axis=-1) / (2.0 * var)


def expm1_error_profile(x, dtype=np.float32):
    """Absolute errors of naive exp(x)-1 and expm1(x) in ``dtype`` vs float64 expm1."""
    x64 = np.asarray(x, dtype=np.float64)
    truth = np.expm1(x64)
    xl = x64.astype(dtype)
    naive = (np.exp(xl) - dtype(1)).astype(np.float64)
    stable = np.expm1(xl).astype(np.float64)
    return np.abs(naive - truth), np.abs(stable - truth)
