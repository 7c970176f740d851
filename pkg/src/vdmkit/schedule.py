"""Noise schedules gamma(t) = -log SNR(t) for a variance-preserving diffusion.

Four kinds are supported:

* ``learned-monotonic``: a three-layer network with positive weights, rescaled
  so that gamma(0) and gamma(1) hit trainable endpoints exactly.
* ``log-snr-linear``: gamma0 + (gamma1 - gamma0) t.
* ``beta-linear``: the continuous approximation of the linear-beta DDPM
  process, gamma(t) = log(expm1(1e-4 + 10 t^2)).
* ``alpha-cosine``: the improved-DDPM cosine schedule, unclipped.

Fixed kinds may optionally be shifted and scaled on the log scale so their
values at t=0 and t=1 match given endpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DomainError, ScheduleInvalidError

KINDS = ("learned-monotonic", "log-snr-linear", "beta-linear", "alpha-cosine")

NCSN_GAMMA0 = 2 * math.log(0.01)
NCSN_GAMMA1 = 2 * math.log(0.01) + 2 * math.log(5000.0)

COSINE_OFFSET = 0.008
# the unclipped cosine schedule has gamma = -inf at t=0 and +inf at t=1
COSINE_TIME_MARGIN = 1e-4


@dataclass(frozen=True)
class ScheduleEndpoints:
    gamma0: float = -10.0
    gamma1: float = 10.0

    def __post_init__(self):
        if not self.gamma0 < self.gamma1:
            raise ConfigurationError(f"need gamma0 < gamma1, got {self.gamma0}, {self.gamma1}")

    @property
    def snr_max(self):
        return math.exp(-self.gamma0)

    @property
    def snr_min(self):
        return math.exp(-self.gamma1)


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


class MonotonicNetParams:
    """Weights of gamma_tilde(t) = l1(t) + l3(sigmoid(l2(l1(t)))).

    Weights are stored unconstrained and mapped through softplus when used, so
    every effective weight is strictly positive.  Biases are free.
    """

    def __init__(self, l1_w, l1_b, l2_w, l2_b, l3_w, l3_b):
        self.l1_w = ad.Parameter(np.reshape(l1_w, ()), "sched.l1_w")
        self.l1_b = ad.Parameter(np.reshape(l1_b, ()), "sched.l1_b")
        self.l2_w = ad.Parameter(np.ravel(l2_w), "sched.l2_w")
        self.l2_b = ad.Parameter(np.ravel(l2_b), "sched.l2_b")
        self.l3_w = ad.Parameter(np.ravel(l3_w), "sched.l3_w")
        self.l3_b = ad.Parameter(np.reshape(l3_b, ()), "sched.l3_b")

    @classmethod
    def init(cls, rng: np.random.Generator, width: int = 1024, l3_scale: float = 1e-4):
        """Near log-SNR-linear start: unit l1 slope, small positive l3 weights."""
        w2 = rng.uniform(1.0, 10.0, width)
        b2 = -w2 * rng.uniform(0.0, 1.0, width)
        w3 = l3_scale * rng.uniform(0.5, 1.5, width)
        return cls(softplus_inverse(1.0), 0.0, softplus_inverse(w2), b2,
                   softplus_inverse(w3), 0.0)

    @classmethod
    def from_effective(cls, l1_w, l1_b, l2_w, l2_b, l3_w, l3_b):
        """Build from effective (positive) weights; a zero weight maps to raw -inf."""
        return cls(softplus_inverse(l1_w), l1_b, softplus_inverse(l2_w), l2_b,
                   softplus_inverse(l3_w), l3_b)

    @property
    def width(self):
        return self.l2_w.value.size

    def parameters(self) -> list[ad.Parameter]:
        return [self.l1_w, self.l1_b, self.l2_w, self.l2_b, self.l3_w, self.l3_b]

    def effective(self):
        return tuple(ad.softplus(p) for p in (self.l1_w, self.l2_w, self.l3_w))


def _check_time(t):
    tv = np.asarray(ad.value_of(t), dtype=float)
    if np.any(~np.isfinite(tv)) or np.any(tv < 0.0) or np.any(tv > 1.0):
        raise DomainError("time must lie in [0, 1]")
    return tv


def gamma_tilde(net: MonotonicNetParams, t):
    """Unnormalised monotone network output at times ``t`` (array, any shape)."""
    tv = _check_time(t)
    w1, w2, w3 = net.effective()
    h1 = w1 * tv + net.l1_b
    h2 = ad.sigmoid(ad.reshape(h1, np.shape(tv) + (1,)) * w2 + net.l2_b)
    return h1 + ad.sum_(h2 * w3, axis=-1)


def gamma_tilde_prime(net: MonotonicNetParams, t):
    """d gamma_tilde / dt as an explicit chain-rule expression (differentiable in the weights)."""
    tv = _check_time(t)
    w1, w2, w3 = net.effective()
    h1 = w1 * tv + net.l1_b
    s = ad.sigmoid(ad.reshape(h1, np.shape(tv) + (1,)) * w2 + net.l2_b)
    return w1 + w1 * ad.sum_(s * (1.0 - s) * (w2 * w3), axis=-1)


class NoiseSchedule:
    """A gamma(t) function with endpoint parameters.

    ``endpoints`` are trainable ``Parameter`` scalars for the learned and
    log-SNR-linear kinds.  For beta-linear and alpha-cosine, passing
    ``endpoints`` rescales the natural curve affinely in gamma; leaving it out
    keeps the natural curve.
    """

    def __init__(self, kind: str, endpoints: ScheduleEndpoints | None = None,
                 net: MonotonicNetParams | None = None):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown schedule kind {kind!r}")
        if kind == "learned-monotonic" and net is None:
            raise ConfigurationError("learned-monotonic schedule needs network parameters")
        if kind == "log-snr-linear" and endpoints is None:
            endpoints = ScheduleEndpoints(NCSN_GAMMA0, NCSN_GAMMA1)
        if kind == "learned-monotonic" and endpoints is None:
            endpoints = ScheduleEndpoints()
        self.kind = kind
        self.net = net if kind == "learned-monotonic" else None
        self.rescaled = endpoints is not None
        if endpoints is None:
            endpoints = ScheduleEndpoints(*_natural_range(kind))
        self.gamma0 = ad.Parameter(float(endpoints.gamma0), "sched.gamma0")
        self.gamma1 = ad.Parameter(float(endpoints.gamma1), "sched.gamma1")

    @classmethod
    def learned(cls, rng, endpoints: ScheduleEndpoints | None = None, width: int = 1024, **kw):
        return cls("learned-monotonic", endpoints or ScheduleEndpoints(),
                   MonotonicNetParams.init(rng, width, **kw))

    def __repr__(self):
        return f"NoiseSchedule({self.kind!r}, {self.endpoints})"

    @property
    def endpoints(self) -> ScheduleEndpoints:
        return ScheduleEndpoints(float(self.gamma0.value), float(self.gamma1.value))

    def endpoint_parameters(self) -> list[ad.Parameter]:
        if self.kind in ("learned-monotonic", "log-snr-linear"):
            return [self.gamma0, self.gamma1]
        return []

    def shape_parameters(self) -> list[ad.Parameter]:
        return self.net.parameters() if self.net is not None else []

    def parameters(self) -> list[ad.Parameter]:
        return self.endpoint_parameters() + self.shape_parameters()

    # --- gamma ---------------------------------------------------------------

    def gamma(self, t):
        tv = _check_time(t)
        if self.kind == "learned-monotonic":
            ends = gamma_tilde(self.net, np.array([0.0, 1.0]))
            g0t, g1t = ends[0], ends[1]
            frac = (gamma_tilde(self.net, tv) - g0t) / (g1t - g0t)
            return self.gamma0 + (self.gamma1 - self.gamma0) * frac
        if self.kind == "log-snr-linear":
            return self.gamma0 + (self.gamma1 - self.gamma0) * tv
        g = _natural_gamma(self.kind, tv)
        if not self.rescaled:
            return g
        n0, n1 = _natural_range(self.kind)
        return self.gamma0 + (self.gamma1 - self.gamma0) * ((g - n0) / (n1 - n0))

    def gamma_prime(self, t):
        tv = _check_time(t)
        if self.kind == "learned-monotonic":
            ends = gamma_tilde(self.net, np.array([0.0, 1.0]))
            return (self.gamma1 - self.gamma0) * gamma_tilde_prime(self.net, tv) / (ends[1] - ends[0])
        if self.kind == "log-snr-linear":
            return (self.gamma1 - self.gamma0) * np.ones_like(tv)
        gp = _natural_gamma_prime(self.kind, tv)
        if not self.rescaled:
            return gp
        n0, n1 = _natural_range(self.kind)
        return (self.gamma1 - self.gamma0) * (gp / (n1 - n0))

    def gamma_value(self, t) -> np.ndarray:
        with ad.no_grad():
            return np.array(ad.value_of(self.gamma(t)), dtype=float)

    def gamma_prime_value(self, t) -> np.ndarray:
        with ad.no_grad():
            return np.array(ad.value_of(self.gamma_prime(t)), dtype=float)

    def fingerprint(self) -> bytes:
        parts = [self.kind.encode(), np.float64(self.rescaled).tobytes()]
        parts += [np.ascontiguousarray(p.value, dtype="<f8").tobytes()
                  for p in (self.gamma0, self.gamma1, *self.shape_parameters())]
        return b"".join(parts)


def _cos_time(t):
    return COSINE_TIME_MARGIN + (1.0 - 2 * COSINE_TIME_MARGIN) * np.asarray(t, dtype=float)


def _natural_gamma(kind, t):
    t = np.asarray(t, dtype=float)
    if kind == "beta-linear":
        return np.log(np.expm1(1e-4 + 10.0 * t**2))
    if kind == "alpha-cosine":
        s = COSINE_OFFSET
        u0 = s / (1 + s) * math.pi / 2
        u = (_cos_time(t) + s) / (1 + s) * math.pi / 2
        # 1 - alpha^2 = sin(u - u0) sin(u + u0) / cos^2(u0), stable near t=0
        one_minus = np.sin(u - u0) * np.sin(u + u0) / math.cos(u0) ** 2
        alpha = np.cos(u) / math.cos(u0)
        return np.log(one_minus) - 2.0 * np.log(alpha)
    raise ConfigurationError(f"{kind} has no natural closed form")


def _natural_gamma_prime(kind, t):
    t = np.asarray(t, dtype=float)
    if kind == "beta-linear":
        x = 1e-4 + 10.0 * t**2
        return 20.0 * t / -np.expm1(-x)
    if kind == "alpha-cosine":
        s = COSINE_OFFSET
        u0 = s / (1 + s) * math.pi / 2
        du = math.pi / 2 / (1 + s) * (1.0 - 2 * COSINE_TIME_MARGIN)
        u = (_cos_time(t) + s) / (1 + s) * math.pi / 2
        one_minus = np.sin(u - u0) * np.sin(u + u0) / math.cos(u0) ** 2
        alpha = np.cos(u) / math.cos(u0)
        dalpha = -np.sin(u) / math.cos(u0) * du
        return -2.0 / (alpha * one_minus) * dalpha
    raise ConfigurationError(f"{kind} has no natural closed form")


def _natural_range(kind):
    if kind == "log-snr-linear":
        return NCSN_GAMMA0, NCSN_GAMMA1
    if kind == "learned-monotonic":
        return ScheduleEndpoints().gamma0, ScheduleEndpoints().gamma1
    g = _natural_gamma(kind, np.array([0.0, 1.0]))
    return float(g[0]), float(g[1])


# --- module-level operations ---------------------------------------------------


def gamma(schedule: NoiseSchedule, t):
    return schedule.gamma_value(t)


def gamma_prime(schedule: NoiseSchedule, t):
    return schedule.gamma_prime_value(t)


def snr_alpha_sigma(schedule: NoiseSchedule, t):
    """(SNR, alpha^2, sigma^2) at ``t``."""
    g = schedule.gamma_value(t)
    return np.exp(-g), ad.sigmoid(-g), ad.sigmoid(g)


def implied_weighting(schedule: NoiseSchedule, t):
    """Weight w(SNR(t)) = 1/gamma'(t) implied by an unweighted noise-prediction MSE."""
    gp = schedule.gamma_prime_value(t)
    if np.any(gp <= 0):
        raise ScheduleInvalidError("gamma'(t) must be positive for an implied weighting")
    return 1.0 / gp


CSV_COLUMNS = ("t", "gamma", "snr", "alpha_sq", "sigma_sq", "gamma_prime", "implied_weight")


def analysis_table(schedule: NoiseSchedule, grid_size: int = 1001) -> np.ndarray:
    t = np.linspace(0.0, 1.0, grid_size)
    g = schedule.gamma_value(t)
    gp = schedule.gamma_prime_value(t)
    with np.errstate(divide="ignore"):
        w = np.where(gp > 0, 1.0 / np.where(gp > 0, gp, 1.0), np.inf)
    return np.column_stack([t, g, np.exp(-g), ad.sigmoid(-g), ad.sigmoid(g), gp, w])


def write_analysis_csv(schedule: NoiseSchedule, path, grid_size: int = 1001) -> Path:
    path = Path(path)
    rows = analysis_table(schedule, grid_size)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    return path
