"""Training loop: VLB for the denoiser and endpoints, variance for the schedule shape."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DivergenceError
from .losses import LN2, VarianceRouting, discrete_indices, iid_times, low_discrepancy_times, prior_loss, recon_loss_mc
from .model import VDModel

MODES = ("continuous", "discrete")
SAMPLERS = ("low-discrepancy", "iid-uniform")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "continuous"
    T_train: int = 100
    steps: int = 2000
    batch_size: int = 128
    lr: float = 2e-3
    schedule_lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    variance_min: bool | None = None  # default: on in continuous mode, off in discrete mode
    time_sampler: str = "low-discrepancy"
    log_every: int = 50
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.time_sampler not in SAMPLERS:
            raise ConfigurationError(f"time sampler must be one of {SAMPLERS}")
        if self.mode == "discrete" and self.T_train < 1:
            raise ConfigurationError("T_train must be at least 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be at least 2")

    @property
    def use_variance_min(self) -> bool:
        return self.mode == "continuous" if self.variance_min is None else self.variance_min


class Adam:
    """Adam over named parameters with per-group learning rates."""

    def __init__(self, groups, beta1=0.9, beta2=0.99, eps=1e-8):
        self.groups = [(list(params), lr) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for params, lr in self.groups:
            for p in params:
                g = p.grad
                m = self.m.get(p.name, np.zeros_like(p.value))
                v = self.v.get(p.name, np.zeros_like(p.value))
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self.m[p.name], self.v[p.name] = m, v
                p.assign(p.value - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))

    def state_dict(self):
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


@dataclass
class StepLog:
    step: int
    loss_bpd: float
    var_bpd: float  # spread of the per-example diffusion estimate within the batch
    gamma0: float
    gamma1: float


@dataclass
class Trainer:
    model: VDModel
    data: np.ndarray
    config: TrainConfig
    rng: np.random.Generator = None
    ema: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.config.validate()
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        cfg = self.config
        sched = self.model.schedule
        slr = cfg.lr if cfg.schedule_lr is None else cfg.schedule_lr
        self.optimizer = Adam([(self.model.denoiser.parameters(), cfg.lr),
                               (sched.endpoint_parameters(), slr),
                               (sched.shape_parameters(), slr)], cfg.beta1, cfg.beta2, cfg.adam_eps)
        if not self.ema:
            self.ema = self.model.named_values()

    @property
    def step_count(self):
        return self.optimizer.t

    def _times(self, k):
        if self.config.time_sampler == "low-discrepancy":
            return low_discrepancy_times(k, self.rng.uniform()).times
        return iid_times(k, self.rng).times

    def step(self) -> StepLog:
        cfg, model = self.config, self.model
        sched, den = model.schedule, model.denoiser
        k = cfg.batch_size
        x = self.data[self.rng.integers(0, self.data.shape[0], size=k)]
        d = x.shape[1]
        t = self._times(k)
        eps = self.rng.standard_normal(x.shape)
        eps0 = self.rng.standard_normal(x.shape)
        for p in model.parameters():
            p.zero_grad()
        T = cfg.T_train if cfg.mode == "discrete" else None
        tt = discrete_indices(t, T) if T else t
        route = VarianceRouting(x, sched, den, tt, eps, T=T)
        recon = recon_loss_mc(x, sched.gamma(0.0), model.V, eps0)
        prior = prior_loss(x, sched.gamma(1.0))
        objective = ad.mean(route.per_example) + ad.mean(recon) + ad.mean(prior)
        loss = float(ad.value_of(objective))
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.step_count}: "
                                  f"gamma0={sched.endpoints.gamma0:.4g}, gamma1={sched.endpoints.gamma1:.4g}")
        route.backward(objective)
        route.chain_vlb(sched.endpoint_parameters())
        shape = sched.shape_parameters()
        if shape:
            if cfg.use_variance_min:
                for p, g in zip(shape, route.variance_gradients(shape)):
                    p.grad = g
            else:
                route.chain_vlb(shape)
        self.optimizer.step()
        self._update_ema()
        per = route.losses / (d * LN2)
        log = StepLog(self.step_count, loss / (d * LN2), float(per.var(ddof=1)),
                      sched.endpoints.gamma0, sched.endpoints.gamma1)
        if cfg.log_every and (self.step_count % cfg.log_every == 0 or self.step_count == 1):
            self.history.append(log)
        return log

    def _update_ema(self):
        n = self.step_count
        decay = min(self.config.ema_decay, (1.0 + n) / (10.0 + n))
        for p in self.model.parameters():
            self.ema[p.name] = decay * self.ema[p.name] + (1.0 - decay) * p.value

    def run(self, steps: int | None = None, callback=None) -> list[StepLog]:
        for _ in range(self.config.steps if steps is None else steps):
            log = self.step()
            if callback is not None:
                callback(log)
        return self.history

    def ema_model(self) -> VDModel:
        return self.model.with_values(self.ema)


def config_dict(cfg) -> dict:
    return asdict(cfg)
