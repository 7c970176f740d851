"""Noise-prediction network eps_hat(z_t; gamma_t) and the three model views.

The network is a residual MLP over the whole data vector.  Its input is the
latent, high-frequency Fourier features of the latent, and a sinusoidal
embedding of gamma rescaled to roughly [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .diffusion import DiffusionCoeffs
from .errors import ConfigurationError, ShapeError, SingularityError


@dataclass(frozen=True)
class FourierConfig:
    n_min: int = 7
    n_max: int = 8

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ConfigurationError("n_min must not exceed n_max")

    @property
    def count(self):
        return self.n_max - self.n_min + 1


def fourier_features(z, config: FourierConfig):
    """[sin(2^n pi z), cos(2^n pi z)] for n ascending, concatenated on the last axis."""
    chans = []
    for n in range(config.n_min, config.n_max + 1):
        arg = z * (2.0**n * math.pi)
        chans += [ad.sin(arg), ad.cos(arg)]
    return ad.concat(chans, axis=-1)


def gamma_embedding(gamma_t, gamma_lo: float, gamma_hi: float, dim: int):
    """Sinusoidal embedding of gamma after mapping [gamma_lo, gamma_hi] to [0, 1]."""
    r = (gamma_t - gamma_lo) * (1.0 / (gamma_hi - gamma_lo))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = ad.reshape(r, np.shape(ad.value_of(r)) + (1,)) * (1000.0 * freqs)
    return ad.concat([ad.sin(arg), ad.cos(arg)], axis=-1)


@dataclass
class DenoiserParams:
    d: int
    fourier: FourierConfig = field(default_factory=FourierConfig)
    width: int = 256
    n_blocks: int = 3  # with the input layer: 4 hidden layers
    emb_dim: int = 32
    gamma_lo: float = -10.0
    gamma_hi: float = 10.0
    weights: dict = field(default_factory=dict)

    @property
    def in_width(self):
        return self.d * (1 + 2 * self.fourier.count) + self.emb_dim

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, **kw) -> "DenoiserParams":
        p = cls(d=d, **kw)
        w = {}

        def dense(name, fan_in, fan_out, scale=1.0):
            w[f"{name}.w"] = ad.Parameter(rng.normal(0, scale / math.sqrt(fan_in), (fan_in, fan_out)),
                                          f"den.{name}.w")
            w[f"{name}.b"] = ad.Parameter(np.zeros(fan_out), f"den.{name}.b")

        dense("in", p.in_width, p.width)
        for i in range(p.n_blocks):
            dense(f"block{i}", p.width, p.width, scale=1.0 / math.sqrt(p.n_blocks))
        # zero output layer: the untrained model predicts eps_hat = 0
        dense("out", p.width, d, scale=0.0)
        p.weights = w
        return p

    def parameters(self) -> list[ad.Parameter]:
        return list(self.weights.values())

    def config_dict(self):
        return dict(d=self.d, n_min=self.fourier.n_min, n_max=self.fourier.n_max, width=self.width,
                    n_blocks=self.n_blocks, emb_dim=self.emb_dim, gamma_lo=self.gamma_lo,
                    gamma_hi=self.gamma_hi)

    @classmethod
    def from_config(cls, cfg: dict, weights: dict) -> "DenoiserParams":
        cfg = dict(cfg)
        fourier = FourierConfig(cfg.pop("n_min"), cfg.pop("n_max"))
        return cls(fourier=fourier, weights=weights, **cfg)


def _dense(p: DenoiserParams, name, h):
    return ad.matmul(h, p.weights[f"{name}.w"]) + p.weights[f"{name}.b"]


def predict_noise(params: DenoiserParams, z_t, gamma_t):
    """eps_hat for a batch ``z_t`` of shape (k, d) at per-row (or shared) ``gamma_t``."""
    zv = ad.value_of(z_t)
    if zv.ndim != 2 or zv.shape[-1] != params.d:
        raise ShapeError(f"expected latents of shape (k, {params.d}), got {zv.shape}")
    k = zv.shape[0]
    gv = np.asarray(ad.value_of(gamma_t))
    if gv.ndim == 0:
        gamma_t = gamma_t + np.zeros(k)
    elif gv.shape != (k,):
        raise ShapeError(f"gamma must be scalar or shape ({k},), got {gv.shape}")
    emb = gamma_embedding(gamma_t, params.gamma_lo, params.gamma_hi, params.emb_dim)
    feats = ad.concat([z_t, fourier_features(z_t, params.fourier), emb], axis=-1)
    h = _dense(params, "in", feats)
    for i in range(params.n_blocks):
        h = h + _dense(params, f"block{i}", ad.silu(h))
    return _dense(params, "out", ad.silu(h))


def predict_noise_value(params: DenoiserParams, z_t, gamma_t) -> np.ndarray:
    with ad.no_grad():
        return np.asarray(ad.value_of(predict_noise(params, np.asarray(z_t, dtype=float), gamma_t)))


def eps_to_x(z_t, eps_hat, c: DiffusionCoeffs):
    """x_hat = (z_t - sigma_t eps_hat) / alpha_t."""
    a, s = _col(c.alpha, z_t), _col(c.sigma, z_t)
    return (z_t - s * eps_hat) / a


def eps_to_score(z_t, eps_hat, c: DiffusionCoeffs):
    """Score model s(z_t) = -eps_hat / sigma_t."""
    if np.any(np.asarray(c.sigma_sq) <= 0):
        raise SingularityError("score is undefined at sigma_t = 0")
    return -eps_hat / _col(c.sigma, z_t)


def x_to_score(z_t, x_hat, c: DiffusionCoeffs):
    """Score from the denoising view: (alpha_t x_hat - z_t) / sigma_t^2."""
    if np.any(np.asarray(c.sigma_sq) <= 0):
        raise SingularityError("score is undefined at sigma_t = 0")
    return (_col(c.alpha, z_t) * x_hat - z_t) / _col(c.sigma_sq, z_t)


def _col(v, like):
    v = np.asarray(v, dtype=float)
    nd = np.ndim(ad.value_of(like))
    if v.ndim == 0 or v.ndim >= nd:
        return v
    return v.reshape(v.shape + (1,) * (nd - v.ndim))
