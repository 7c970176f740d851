"""Variational bound terms: prior, reconstruction and diffusion losses.

Loss functions return per-example values in nats (summed over data
dimensions) so callers can average, square, or inspect the spread.  The
diffusion losses are graph-aware: pass tensors and they differentiate.

Data values live on a grid of ``V`` levels spread evenly over [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .denoiser import DenoiserParams, predict_noise
from .diffusion import bcast, marginal_sample
from .errors import ParameterError, QuantizationError, SequencingError, WeightError
from .schedule import NoiseSchedule

LN2 = math.log(2.0)


def grid_levels(V: int) -> np.ndarray:
    if V < 2:
        raise ParameterError("need at least two levels")
    return np.linspace(-1.0, 1.0, V)


def to_indices(x, V: int) -> np.ndarray:
    """Level index of every entry of ``x``; raises if any entry is off the grid."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise QuantizationError("data contains non-finite values")
    idx = np.rint((x + 1.0) * (V - 1) / 2.0)
    if np.any(idx < 0) or np.any(idx > V - 1) or np.any(np.abs(grid_levels(V)[idx.astype(int).clip(0, V - 1)] - x) > 1e-9):
        raise QuantizationError("data value off the level grid")
    return idx.astype(np.int64)


@dataclass(frozen=True)
class VlbBreakdown:
    prior_loss: float
    recon_loss: float
    diffusion_loss: float
    total_bpd: float
    d: int
    total_bpd_se: float = 0.0
    diffusion_se: float = 0.0

    @property
    def total_nats(self):
        return self.prior_loss + self.recon_loss + self.diffusion_loss


@dataclass(frozen=True)
class TimeBatch:
    times: np.ndarray
    mode: str


# --- prior & reconstruction -------------------------------------------------------


def prior_loss(x, gamma1):
    """KL(q(z_1|x) || N(0, I)) per example; ``gamma1`` may be a schedule or a gamma value."""
    if isinstance(gamma1, NoiseSchedule):
        gamma1 = gamma1.gamma1
    sig2 = ad.sigmoid(gamma1)
    alpha2 = ad.sigmoid(ad.neg(gamma1))
    log_sig2 = ad.neg(ad.softplus(ad.neg(gamma1)))
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return 0.5 * (d * (sig2 - 1.0 - log_sig2) + alpha2 * np.sum(x**2, axis=-1))


def recon_loss(x, z0, gamma0, V: int):
    """-log p(x | z_0) per example with p(x_i|z_0i) proportional to q(z_0i|x_i) over the V levels.

    ``gamma0`` is the gamma value at t=0 (scalar, array or tensor).
    """
    idx = to_indices(x, V)
    levels = grid_levels(V)
    alpha = ad.sqrt(ad.sigmoid(ad.neg(gamma0)))
    inv2var = 0.5 / ad.sigmoid(gamma0)
    z = ad.reshape(z0, np.shape(ad.value_of(z0)) + (1,)) if isinstance(z0, ad.Tensor) \
        else np.asarray(z0, dtype=float)[..., None]
    diff = z - alpha * levels
    logits = ad.neg(ad.square(diff) * inv2var)
    log_norm = ad.logsumexp(logits, axis=-1)
    lv = ad.value_of(logits)
    onehot = np.zeros(lv.shape)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    true_logit = ad.sum_(logits * onehot, axis=-1)
    return ad.sum_(log_norm - true_logit, axis=-1)


def recon_loss_mc(x, gamma0, V: int, eps):
    """Reparameterised single-sample reconstruction loss, differentiable in ``gamma0``."""
    z0 = marginal_sample(np.asarray(x, dtype=float), gamma0, eps)
    return recon_loss(x, z0, gamma0, V)


# --- time samplers ----------------------------------------------------------------


def low_discrepancy_times(k: int, u0: float) -> TimeBatch:
    """t_i = (u0 + i/k) mod 1 for i = 1..k."""
    if k < 1:
        raise ParameterError("batch size must be positive")
    i = np.arange(1, k + 1)
    return TimeBatch(np.mod(u0 + i / k, 1.0), "low-discrepancy")


def iid_times(k: int, rng: np.random.Generator) -> TimeBatch:
    return TimeBatch(rng.uniform(0.0, 1.0, k), "iid-uniform")


def discrete_indices(u, T: int) -> np.ndarray:
    """Map uniforms in [0, 1) to step indices 1..T."""
    return np.clip(np.floor(np.asarray(u) * T).astype(np.int64) + 1, 1, T)


# --- diffusion losses -----------------------------------------------------------------


def _sq_err(eps, eps_hat):
    return ad.sum_(ad.square(eps - eps_hat), axis=-1)


def discrete_diffusion_loss(x, schedule: NoiseSchedule, denoiser: DenoiserParams, T: int, i, eps):
    """Per-example single-draw estimate of the T-step diffusion loss.

    (T/2) expm1(gamma(t) - gamma(s)) ||eps - eps_hat(z_t; gamma(t))||^2 with
    s = (i-1)/T, t = i/T.
    """
    if T < 1:
        raise ParameterError("T must be at least 1")
    i = np.asarray(i)
    if np.any(i < 1) or np.any(i > T):
        raise ParameterError("step index outside 1..T")
    return _discrete_loss_from_gammas(x, denoiser, T, schedule.gamma(i / T), schedule.gamma((i - 1) / T), eps)


def _discrete_loss_from_gammas(x, denoiser, T, g_t, g_s, eps):
    z_t = marginal_sample(np.asarray(x, dtype=float), g_t, eps)
    eps_hat = predict_noise(denoiser, z_t, g_t)
    return (0.5 * T) * ad.expm1(g_t - g_s) * _sq_err(eps, eps_hat)


def continuous_diffusion_loss(x, schedule: NoiseSchedule, denoiser: DenoiserParams, t, eps,
                              gamma_t=None, gamma_prime_t=None):
    """Per-example estimate 0.5 gamma'(t) ||eps - eps_hat(z_t; gamma(t))||^2.

    ``gamma_t``/``gamma_prime_t`` override the schedule queries; the variance
    routing uses this to splice detached leaves into the graph.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    g = schedule.gamma(t) if gamma_t is None else gamma_t
    gp = schedule.gamma_prime(t) if gamma_prime_t is None else gamma_prime_t
    z_t = marginal_sample(x, g, eps)
    eps_hat = predict_noise(denoiser, z_t, g)
    return 0.5 * gp * _sq_err(eps, eps_hat)


def weighted_continuous_loss(x, schedule: NoiseSchedule, denoiser: DenoiserParams,
                             weight: Callable, t, eps, weight_grad: bool = True):
    """0.5 gamma'(t) w(SNR(t)) ||eps - eps_hat||^2 per example.

    ``weight`` maps SNR to positive weights.  By default it receives an
    autodiff tensor, so it must be written with operator arithmetic or
    ``vdmkit.autodiff`` ops, and the schedule gradient includes dw/dSNR.
    With ``weight_grad=False`` it receives a plain array and the weight is
    held constant under differentiation.
    """
    t = np.asarray(t, dtype=float)
    g = schedule.gamma(t)
    if weight_grad:
        w = weight(ad.exp(-g))
    else:
        w = np.asarray(weight(np.exp(-np.asarray(ad.value_of(g)))), dtype=float)
    wv = np.asarray(ad.value_of(w), dtype=float)
    if wv.shape not in ((), np.shape(t)) or np.any(~(wv > 0)):
        raise WeightError("weighting function must return positive weights, one per time")
    return continuous_diffusion_loss(x, schedule, denoiser, t, eps, gamma_t=g) * w


# --- variance-minimising schedule gradients -----------------------------------------


class VarianceRouting:
    """One forward/backward pass serving two objectives.

    The schedule outputs at the sampled times (gamma(t), gamma'(t) in
    continuous time; gamma(t), gamma(s) for the T-step loss) are cut from the
    schedule graph and fed to the diffusion loss as leaves.  After the
    caller's single backward pass over ``objective = mean_i L_i + (terms not
    touching the leaves)``, the leaf gradients hold dL_i/d(output_i) / k.
    The schedule parameters then receive either the VLB gradient (chain rule
    as usual) or the gradient of mean_i L_i^2, obtained by rescaling the leaf
    gradients by 2 L_i before chaining through the schedule network.

    For the T-step loss pass step indices ``i`` (1..T) as ``t`` and set ``T``.
    """

    def __init__(self, x, schedule: NoiseSchedule, denoiser: DenoiserParams, t, eps, T: int | None = None):
        self.schedule = schedule
        self.T = T
        if T is None:
            self.outputs = [schedule.gamma(t), schedule.gamma_prime(t)]
        else:
            i = np.asarray(t)
            self.outputs = [schedule.gamma(i / T), schedule.gamma((i - 1) / T)]
        self.leaves = [ad.Parameter(ad.value_of(o), f"route.{k}") for k, o in enumerate(self.outputs)]
        if T is None:
            self.per_example = continuous_diffusion_loss(
                x, schedule, denoiser, t, eps, gamma_t=self.leaves[0], gamma_prime_t=self.leaves[1])
        else:
            self.per_example = _discrete_loss_from_gammas(x, denoiser, T, self.leaves[0], self.leaves[1], eps)
        self._done = False

    @property
    def losses(self) -> np.ndarray:
        return np.asarray(ad.value_of(self.per_example))

    def backward(self, objective: ad.Tensor):
        ad.backward(objective)
        self._done = True

    def _surrogate(self, scale):
        if not self._done:
            raise SequencingError("schedule-output gradients are not cached; run backward first")
        terms = [ad.constant(scale * leaf.grad) * out for leaf, out in zip(self.leaves, self.outputs)]
        return ad.sum_(terms[0] + terms[1])

    def chain_vlb(self, params):
        """Accumulate the VLB gradient of the schedule outputs into ``params``."""
        for p, g in zip(params, ad.gradients(self._surrogate(1.0), params)):
            p.grad = p.grad + g

    def variance_gradients(self, params) -> list[np.ndarray]:
        """Gradients of mean_i L_i^2 w.r.t. ``params`` (no second pass through the denoiser)."""
        # leaf grads are (1/k) dL_i/dout_i and the squared objective is also a mean over i
        return ad.gradients(self._surrogate(2.0 * self.losses), params)


def variance_objective_gradients(x, schedule: NoiseSchedule, denoiser: DenoiserParams, t, eps):
    """Gradient of the mean squared per-example diffusion loss w.r.t. the schedule shape.

    Returns ``{parameter name: gradient}``.  The denoiser's accumulators receive
    the ordinary VLB gradient as a side effect of the single backward pass.
    """
    route = VarianceRouting(x, schedule, denoiser, t, eps)
    route.backward(ad.mean(route.per_example))
    params = schedule.shape_parameters()
    return {p.name: g for p, g in zip(params, route.variance_gradients(params))}


# --- schedule invariance helpers ---------------------------------------------------


def change_of_variables_terms(x, schedule: NoiseSchedule, denoiser: DenoiserParams, gamma_draws, eps):
    """Continuous-loss terms re-expressed as draws uniform in gamma (i.e. in log-SNR).

    For each target gamma the time is t = gamma^{-1}(target); the time-domain
    integrand is divided by its density gamma'(t)/(gamma1 - gamma0).  The
    result depends on the schedule only through its endpoints.

    The latent and the denoiser see the target gamma itself rather than
    gamma(t) recomputed from the solved time, which would only agree to the
    bisection's resolution.
    """
    gamma_draws = np.asarray(gamma_draws, dtype=float)
    t = inverse_gamma(schedule, gamma_draws)
    g0, g1 = schedule.endpoints.gamma0, schedule.endpoints.gamma1
    gp = schedule.gamma_prime_value(t)
    with ad.no_grad():
        terms = ad.value_of(continuous_diffusion_loss(x, schedule, denoiser, t, eps,
                                                      gamma_t=gamma_draws, gamma_prime_t=gp))
    return np.asarray(terms) * (g1 - g0) / gp


def inverse_gamma(schedule: NoiseSchedule, target, iters: int = 200) -> np.ndarray:
    """Solve gamma(t) = target by bisection (gamma is strictly increasing)."""
    target = np.asarray(target, dtype=float)
    lo, hi = np.zeros_like(target), np.ones_like(target)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = schedule.gamma_value(mid) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= 4e-16):
            break
    return 0.5 * (lo + hi)


def variance_exploding_terms(x, schedule: NoiseSchedule, denoiser: DenoiserParams, t, eps):
    """Per-draw continuous loss under alpha = 1, sigma^2 = 1/SNR.

    The variance-preserving denoiser is reused with its input rescaled by
    alpha_vp / alpha_ve = alpha_vp; the loss is the general data-space form
    -0.5 SNR'(t) ||x - x_hat||^2.
    """
    x = np.asarray(x, dtype=float)
    g = schedule.gamma_value(t)
    gp = schedule.gamma_prime_value(t)
    snr = np.exp(-g)
    z_ve = x + eps * bcast(np.exp(0.5 * g), x)
    a_vp = bcast(np.sqrt(ad.sigmoid(-g)), x)
    s_vp = bcast(np.sqrt(ad.sigmoid(g)), x)
    z_vp = a_vp * z_ve
    with ad.no_grad():
        eps_hat = np.asarray(ad.value_of(predict_noise(denoiser, z_vp, g)))
    x_hat = (z_vp - s_vp * eps_hat) / a_vp
    return 0.5 * gp * snr * np.sum((x - x_hat) ** 2, axis=-1)


# --- evaluation -----------------------------------------------------------------------------


def diffusion_loss_draws(x, schedule: NoiseSchedule, denoiser: DenoiserParams, u, eps,
                         T: int | None = None, chunk: int = 4096) -> np.ndarray:
    """Single-draw diffusion losses for rows of ``x`` with uniforms ``u`` and noise ``eps``.

    ``T=None`` is continuous time (t = u); otherwise step i = floor(u T) + 1.
    Sharing (u, eps) across calls with different T gives paired estimates.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[0])
    with ad.no_grad():
        for a in range(0, x.shape[0], chunk):
            sl = slice(a, a + chunk)
            if T is None:
                v = continuous_diffusion_loss(x[sl], schedule, denoiser, u[sl], eps[sl])
            else:
                v = discrete_diffusion_loss(x[sl], schedule, denoiser, T, discrete_indices(u[sl], T), eps[sl])
            out[sl] = ad.value_of(v)
    return out


def draw_uniforms(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """(n, m) uniforms: per row a low-discrepancy set of m points with its own offset."""
    u0 = rng.uniform(0.0, 1.0, (n, 1))
    return np.mod(u0 + np.arange(1, m + 1)[None, :] / m, 1.0)


def vlb_bpd(x, schedule: NoiseSchedule, denoiser: DenoiserParams, V: int, T: int | None = None,
            n_samples: int = 16, n_recon: int = 4, rng: np.random.Generator | None = None,
            stratified: bool = True) -> VlbBreakdown:
    """Negative VLB of a batch in bits per dimension, with its Monte Carlo standard error.

    ``T=None`` evaluates the continuous-time diffusion loss.
    """
    if n_samples < 1 or n_recon < 1:
        raise ParameterError("sample counts must be at least 1")
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    u = draw_uniforms(rng, n, n_samples) if stratified else rng.uniform(size=(n, n_samples))
    eps = rng.standard_normal((n, n_samples, d))
    xr = np.repeat(x, n_samples, axis=0)
    diff = diffusion_loss_draws(xr, schedule, denoiser, u.reshape(-1), eps.reshape(-1, d), T)
    diff = diff.reshape(n, n_samples).mean(axis=1)
    with ad.no_grad():
        g0 = schedule.gamma_value(0.0)
        prior = np.asarray(ad.value_of(prior_loss(x, schedule.gamma_value(1.0))))
        eps0 = rng.standard_normal((n_recon, n, d))
        recon = np.mean([recon_loss_mc(x, g0, V, e) for e in eps0], axis=0)
    per_example = prior + recon + diff
    bpd = per_example / (d * LN2)
    se = bpd.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return VlbBreakdown(float(prior.mean()), float(recon.mean()), float(diff.mean()),
                        float(bpd.mean()), d, float(se), float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


def bpd_estimator_variance(x, schedule: NoiseSchedule, denoiser: DenoiserParams, n_draws: int = 64,
                           rng: np.random.Generator | None = None, T: int | None = None) -> float:
    """Variance of a single-draw diffusion-loss BPD estimate, conditional on the data, averaged over rows."""
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    u = rng.uniform(size=n * n_draws)
    eps = rng.standard_normal((n * n_draws, d))
    vals = diffusion_loss_draws(np.repeat(x, n_draws, axis=0), schedule, denoiser, u, eps, T)
    vals = vals.reshape(n, n_draws) / (d * LN2)
    return float(vals.var(axis=1, ddof=1).mean())
