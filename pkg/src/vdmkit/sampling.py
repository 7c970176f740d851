"""Ancestral sampling from z_1 ~ N(0, I) down to data."""

from __future__ import annotations

import numpy as np

from .denoiser import predict_noise_value
from .diffusion import ancestral_step_from_gammas
from .errors import ParameterError
from .losses import grid_levels
from .model import VDModel


def sample(model: VDModel, T: int, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` examples with ``T`` ancestral steps; outputs lie on the level grid."""
    if T < 1:
        raise ParameterError("T must be at least 1")
    if n < 0:
        raise ParameterError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    g = model.schedule.gamma_value(np.arange(T + 1) / T)
    z = rng.standard_normal((n, model.d))
    for i in range(T, 0, -1):
        eps_hat = predict_noise_value(model.denoiser, z, g[i])
        z = ancestral_step_from_gammas(z, eps_hat, g[i - 1], g[i], rng.standard_normal(z.shape))
    return decode_levels(z, g[0], model.V)


def decode_levels(z0, gamma0: float, V: int) -> np.ndarray:
    """argmax_v p(x = v | z_0) per dimension, i.e. the level nearest to z_0 / alpha_0."""
    levels = grid_levels(V)
    alpha = np.sqrt(1.0 / (1.0 + np.exp(gamma0)))
    idx = np.argmin(np.abs(np.asarray(z0)[..., None] - alpha * levels), axis=-1)
    return levels[idx]
