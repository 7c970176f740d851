"""Evaluation sweeps over T_eval with paired Monte Carlo draws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bitsback import CodecConfig, CodecModel, bbans_encode, net_bpd
from .losses import LN2, diffusion_loss_draws, draw_uniforms, prior_loss, recon_loss_mc
from .model import VDModel


@dataclass(frozen=True)
class EvalRow:
    T_train: str
    T_eval: str
    bpd: float
    se: float
    net_bpd: float | None = None


@dataclass
class PairedDraws:
    """Shared (u, eps) so estimates for different T differ only through T."""

    u: np.ndarray  # (n, m)
    eps: np.ndarray  # (n, m, d)
    eps0: np.ndarray  # (r, n, d) for the reconstruction term

    @classmethod
    def make(cls, n: int, d: int, n_samples: int, n_recon: int, seed: int) -> "PairedDraws":
        rng = np.random.default_rng(seed)
        return cls(draw_uniforms(rng, n, n_samples), rng.standard_normal((n, n_samples, d)),
                   rng.standard_normal((n_recon, n, d)))


def per_example_bpd(model: VDModel, x, draws: PairedDraws, T: int | None) -> np.ndarray:
    """Negative VLB per example (bits/dim) using the shared draws; T=None is continuous time."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    m = draws.u.shape[1]
    diff = diffusion_loss_draws(np.repeat(x, m, axis=0), model.schedule, model.denoiser,
                                draws.u.reshape(-1), draws.eps.reshape(-1, d), T).reshape(n, m).mean(axis=1)
    with ad.no_grad():
        g0, g1 = model.schedule.gamma_value(0.0), model.schedule.gamma_value(1.0)
        prior = np.asarray(ad.value_of(prior_loss(x, g1)))
        recon = np.mean([np.asarray(ad.value_of(recon_loss_mc(x, g0, model.V, e))) for e in draws.eps0], axis=0)
    return (prior + recon + diff) / (d * LN2)


def _label(T):
    return "inf" if T is None else str(T)


def evaluate(model: VDModel, x, T_evals, T_train=None, n_samples: int = 16, n_recon: int = 4,
             seed: int = 0, bits_back: bool = False, codec: CodecConfig | None = None) -> list[EvalRow]:
    """One row per T_eval (None = continuous).  Draws are shared across rows."""
    x = np.asarray(x, dtype=float)
    draws = PairedDraws.make(x.shape[0], x.shape[1], n_samples, n_recon, seed)
    rows = []
    for T in T_evals:
        b = per_example_bpd(model, x, draws, T)
        nb = None
        if bits_back and T is not None:
            blob = bbans_encode(x, CodecModel(model.schedule, model.denoiser, T, model.V), seed, codec)
            nb = net_bpd(blob)
        rows.append(EvalRow(_label(T_train), _label(T), float(b.mean()),
                            float(b.std(ddof=1) / math.sqrt(len(b))) if len(b) > 1 else 0.0, nb))
    return rows


def paired_difference(model: VDModel, x, T_a, T_b, draws: PairedDraws) -> tuple[float, float]:
    """Mean and standard error of bpd(T_a) - bpd(T_b) under shared draws."""
    diff = per_example_bpd(model, x, draws, T_a) - per_example_bpd(model, x, draws, T_b)
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(diff.size))


def format_table(rows: list[EvalRow]) -> str:
    lines = ["T_train,T_eval,bpd,se,net_bpd"]
    for r in rows:
        nb = "" if r.net_bpd is None else f"{r.net_bpd:.6f}"
        lines.append(f"{r.T_train},{r.T_eval},{r.bpd:.6f},{r.se:.6f},{nb}")
    return "\n".join(lines)
