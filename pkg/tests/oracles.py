"""Reference values and brute-force oracles used by the tests.

Constants were evaluated once with mpmath at 40 significant digits and frozen
here.  The oracle functions deliberately avoid the package's own algebra:
they work from alpha/sigma directly, loop where the package vectorises, and
use mpmath where rounding matters.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np

# --- frozen scalar oracles (mpmath, 40 digits) ---------------------------------------------

SOFTPLUS_0 = 0.6931471805599453094172321214581765680755
SIGMOID_PRIME_0 = 0.25
BETA_LINEAR_GAMMA_1 = 10.00005460357960159906535998137678652133
NCSN_GAMMA_0 = -9.210340371976182736071965818737456830404
NCSN_SLOPE = 17.03438638283247485330946739455856052466  # 2 log 5000
NCSN_WEIGHT = 0.05870478557465479840142418516235828198939  # 1 / (2 log 5000)
SIN_12_8_PI = 0.5877852522924731291687059546390727685975
PRIOR_PER_DIM_SIGMA2_HALF = 0.09657359027997265470861606072908828403775  # (0.5 - 1 - ln 0.5) / 2
BETA_WEIGHT_RATIO_HALF_VS_001 = 16.69869381432751679470223284977792509671  # w(0.5) / w(0.01)
COSINE_GAMMA_0 = -12.45199289350056836655893403999545160612
COSINE_GAMMA_1 = 17.53329623540193701121360844865263953833


# --- oracle functions ----------------------------------------------------------------------


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def levels(V):
    return np.array([-1.0 + 2.0 * k / (V - 1) for k in range(V)])


def recon_bruteforce(x, z0, gamma0, V):
    """-log p(x|z0) by explicit enumeration of the V levels in mpmath."""
    mp.mp.dps = 50
    g = mp.mpf(gamma0)
    a = mp.sqrt(1 / (1 + mp.e**g))
    var = 1 / (1 + mp.e**(-g))
    total = mp.mpf(0)
    for xi, zi in zip(np.ravel(x), np.ravel(z0)):
        dens = [mp.e**(-(mp.mpf(zi) - a * mp.mpf(v)) ** 2 / (2 * var)) for v in levels(V)]
        k = int(round((xi + 1) * (V - 1) / 2))
        total -= mp.log(dens[k] / mp.fsum(dens))
    return float(total)


def naive_transition(gs, gt):
    """alpha_{t|s}, sigma^2_{t|s} straight from alpha^2 = sigmoid(-gamma)."""
    a_s2, a_t2 = sigmoid(-gs), sigmoid(-gt)
    a_ts2 = a_t2 / a_s2
    return math.sqrt(a_ts2), (1 - a_t2) - a_ts2 * (1 - a_s2)


def naive_posterior(z_t, x, gs, gt):
    a_ts, s2_ts = naive_transition(gs, gt)
    s2_s, s2_t = sigmoid(gs), sigmoid(gt)
    a_s = math.sqrt(sigmoid(-gs))
    mean = a_ts * s2_s / s2_t * z_t + a_s * s2_ts / s2_t * x
    return mean, s2_ts * s2_s / s2_t


def posterior_by_enumeration(z_t, prior_vals, prior_probs, gs, gt, grid):
    """Moments of q(z_s|z_t) for a discrete prior on x, by quadrature over a z_s grid."""
    a_s, s_s = math.sqrt(sigmoid(-gs)), math.sqrt(sigmoid(gs))
    a_ts, s2_ts = naive_transition(gs, gt)
    w = np.zeros_like(grid)
    for v, p in zip(prior_vals, prior_probs):
        w += p * np.exp(-0.5 * ((grid - a_s * v) / s_s) ** 2) / s_s
    w *= np.exp(-0.5 * (z_t - a_ts * grid) ** 2 / s2_ts)
    w /= w.sum()
    m = (w * grid).sum()
    return m, (w * (grid - m) ** 2).sum()


def discrete_loss_kl_form(x, gammas, eps_fn, rng, n_draws):
    """Per-example Monte Carlo of the sum over steps of E_{z_t} KL(q(z_s|z_t,x) || p(z_s|z_t)).

    ``gammas`` holds gamma(i/T) for i = 0..T; ``eps_fn(z_t, gamma_t)`` is the
    noise predictor.  Each step gets its own independent z_t draws and the KL
    between the two equal-variance Gaussians is evaluated exactly.
    Returns (mean, standard error) of the summed loss, averaged over rows of x.
    """
    T = len(gammas) - 1
    n, d = x.shape
    per_step = []
    for i in range(1, T + 1):
        gs, gt = gammas[i - 1], gammas[i]
        a_t, s_t = math.sqrt(sigmoid(-gt)), math.sqrt(sigmoid(gt))
        a_s = math.sqrt(sigmoid(-gs))
        vals = np.empty(n_draws)
        for k0 in range(0, n_draws, 4096):
            k1 = min(n_draws, k0 + 4096)
            rows = rng.integers(0, n, k1 - k0)
            xb = x[rows]
            z_t = a_t * xb + s_t * rng.standard_normal(xb.shape)
            x_hat = (z_t - s_t * eps_fn(z_t, gt)) / a_t
            m_q, var = naive_posterior(z_t, xb, gs, gt)
            m_p, _ = naive_posterior(z_t, x_hat, gs, gt)
            vals[k0:k1] = ((m_q - m_p) ** 2).sum(axis=1) / (2 * var)
        per_step.append(vals)
    per_step = np.array(per_step)
    total = per_step.sum(axis=0)
    # steps are independent draws: the variance of the sum adds
    se = math.sqrt(sum(v.var(ddof=1) / v.size for v in per_step))
    return float(total.mean()), se


def entropy_bits(p):
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def chi2_critical_5pct(dof):
    from scipy.stats import chi2

    return float(chi2.ppf(0.95, dof))
