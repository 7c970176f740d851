"""Model container: a noise schedule plus a noise-prediction network."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .denoiser import DenoiserParams, FourierConfig
from .schedule import MonotonicNetParams, NoiseSchedule, ScheduleEndpoints


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    V: int = 16
    schedule: str = "learned-monotonic"
    gamma0: float = -10.0
    gamma1: float = 10.0
    schedule_width: int = 64
    width: int = 256
    n_blocks: int = 3
    emb_dim: int = 32
    fourier_min: int = 2
    fourier_max: int = 4


@dataclass
class VDModel:
    schedule: NoiseSchedule
    denoiser: DenoiserParams
    V: int

    @property
    def d(self):
        return self.denoiser.d

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "VDModel":
        ends = ScheduleEndpoints(cfg.gamma0, cfg.gamma1)
        if cfg.schedule == "learned-monotonic":
            sched = NoiseSchedule.learned(rng, ends, width=cfg.schedule_width)
        else:
            sched = NoiseSchedule(cfg.schedule, ends)
        den = DenoiserParams.init(cfg.d, rng, fourier=FourierConfig(cfg.fourier_min, cfg.fourier_max),
                                  width=cfg.width, n_blocks=cfg.n_blocks, emb_dim=cfg.emb_dim,
                                  gamma_lo=cfg.gamma0, gamma_hi=cfg.gamma1)
        return cls(sched, den, cfg.V)

    def parameters(self) -> list[ad.Parameter]:
        return self.schedule.parameters() + self.denoiser.parameters()

    def named_values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_values(self, values: dict[str, np.ndarray]):
        for p in self.parameters():
            p.assign(np.asarray(values[p.name], dtype=float).reshape(p.value.shape))

    def clone(self) -> "VDModel":
        """Deep copy with fresh Parameter objects."""
        sched = self.schedule
        net = None
        if sched.net is not None:
            net = MonotonicNetParams(*(p.value.copy() for p in sched.net.parameters()))
        ends = sched.endpoints if (sched.rescaled or sched.kind in ("learned-monotonic", "log-snr-linear")) else None
        new_sched = NoiseSchedule(sched.kind, ends, net)
        weights = {k: ad.Parameter(v.value.copy(), v.name) for k, v in self.denoiser.weights.items()}
        den = copy.copy(self.denoiser)
        den.weights = weights
        return VDModel(new_sched, den, self.V)

    def with_values(self, values: dict[str, np.ndarray]) -> "VDModel":
        m = self.clone()
        m.load_values(values)
        return m
