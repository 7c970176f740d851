"""Bits-back coding (BB-ANS) through the discrete-time latent chain.

Encoding a batch pops z_0 ~ q(z_0|x) off the message, pushes x with
p(x|z_0), then walks up the chain: pop z_i ~ q(z_i|z_{i-1}) and push z_{i-1}
with p(z_{i-1}|z_i).  Finally z_1 is pushed with N(0, I).  Decoding runs the
exact reverse.  Every (example, dimension) pair is its own ANS lane, so one
denoiser call per step serves the whole batch.

Latents at step i live on a fixed lattice {n * delta_i}.  delta_i depends only
on the schedule (the conditional stds at step i are data independent).  Each
conditional is coded on a window of lattice points centred on its mean, with
frequencies from Gaussian CDF differences mapped to integers by
C(k) = floor(G(k) * (2^P - K)) + k, which guarantees every bin at least one
count and can be evaluated for a single k without building the table.
Reverse-model tables reserve one extra escape symbol; a latent outside the
window is then sent raw.

Before every pop the message is XOR-ed with seeded pseudorandom words
("cleaning") so the popped bits look uniform.  XOR is an involution, so the
decoder reapplies the same words right after the matching push.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, log_softmax, ndtr

from . import ans
from .ans import AnsState, CoderConfig
from .denoiser import DenoiserParams, predict_noise_value
from .diffusion import reverse_from_gammas, transition_from_gammas
from .errors import CodingError, FormatError, MismatchError, ParameterError, UnderflowError
from .losses import grid_levels, to_indices
from .schedule import NoiseSchedule

MAGIC = b"VDMC"
VERSION = 1
RAW_CHUNK_BITS = 16
RAW_CHUNKS = 2
RAW_OFFSET = 1 << (RAW_CHUNK_BITS * RAW_CHUNKS - 1)


# --- standalone discretised Gaussian tables ----------------------------------------------


@dataclass(frozen=True)
class DiscretizedGaussian:
    mean: float
    std: float
    bins: int
    bin_width: float
    lo: float
    hi: float
    pmf: np.ndarray  # integer frequencies summing to 2^precision

    @property
    def centers(self):
        return self.lo + self.bin_width * (np.arange(self.bins) + 0.5)


def discretize_gaussian(mean: float, std: float, bins: int = 4096, lo: float | None = None,
                        hi: float | None = None, precision: int = 16, width: float = 8.0) -> DiscretizedGaussian:
    """Integer pmf over ``bins`` equal bins on [lo, hi] (default mean +/- width*std).

    Every bin gets one count up front; the other 2^P - bins counts are shared
    in proportion to the CDF differences renormalised to the grid, floored,
    with the rounding residual handed out one count at a time to the largest
    fractional parts.
    """
    if not std > 0:
        raise ParameterError("std must be positive")
    if bins < 2:
        raise ParameterError("need at least two bins")
    if bins > (1 << precision):
        raise ParameterError("more bins than the precision can represent")
    lo = mean - width * std if lo is None else lo
    hi = mean + width * std if hi is None else hi
    mass = _bin_mass(mean, std, bins, lo, hi)
    total = mass.sum()
    if total <= 0:
        # grid lies entirely in a tail where the CDF is flat: fall back to a flat table
        mass, total = np.ones(bins), float(bins)
    total_count = 1 << precision
    scaled = mass / total * (total_count - bins)
    pmf = np.floor(scaled).astype(np.int64) + 1
    residual = total_count - int(pmf.sum())
    pmf[np.argsort(-(scaled - np.floor(scaled)), kind="stable")[:residual]] += 1
    return DiscretizedGaussian(float(mean), float(std), bins, (hi - lo) / bins, float(lo), float(hi), pmf)


def _bin_mass(mean, std, bins, lo, hi):
    # edges placed symmetrically about the grid centre and each bin evaluated in
    # its lower tail, so a centred Gaussian gives bit-identical mirror bins
    centre, w = 0.5 * (lo + hi), (hi - lo) / bins
    edges = centre + (np.arange(bins + 1) - 0.5 * bins) * w
    z = (edges - mean) / std
    left, right = z[:-1], z[1:]
    upper = left > -right
    return np.where(upper, ndtr(-left) - ndtr(-right), ndtr(right) - ndtr(left))


def total_variation(dg: DiscretizedGaussian) -> float:
    """TV distance between the integer pmf and the exact renormalised CDF differences."""
    mass = _bin_mass(dg.mean, dg.std, dg.bins, dg.lo, dg.hi)
    exact = mass / mass.sum() if mass.sum() > 0 else np.full(dg.bins, 1.0 / dg.bins)
    return 0.5 * float(np.abs(dg.pmf / dg.pmf.sum() - exact).sum())


# --- codec configuration ---------------------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    coder: CoderConfig = field(default_factory=CoderConfig)
    resolution: float = 256.0  # lattice step = smallest conditional std at that step / resolution
    window: float = 8.0  # table half-width in units of the largest conditional std
    clean: bool = True
    init_words: int = 2  # auxiliary words per lane

    def max_bins(self):
        return 1 << (self.coder.precision - 6)


@dataclass(frozen=True)
class LatentGrid:
    delta: np.ndarray  # (T+1,) lattice step per latent index
    half: np.ndarray  # (T+1,) window half-width in lattice points
    gammas: np.ndarray  # (T+1,) gamma at i/T
    q_std: np.ndarray  # std of q(z_i | z_{i-1}) (or q(z_0|x) at i=0)
    p_std: np.ndarray  # std of p(z_i | z_{i+1}) (or the prior at i=T)


def latent_grid(schedule: NoiseSchedule, T: int, cfg: CodecConfig) -> LatentGrid:
    if T < 1:
        raise ParameterError("T_eval must be at least 1")
    g = schedule.gamma_value(np.arange(T + 1) / T)
    q_std = np.empty(T + 1)
    p_std = np.empty(T + 1)
    q_std[0] = math.sqrt(expit(g[0]))
    q_std[1:] = np.sqrt(np.asarray(transition_from_gammas(g[:-1], g[1:]).sigma_sq_ts))
    p_std[:-1] = np.sqrt(expit(g[:-1]) * -np.expm1(g[:-1] - g[1:]))
    p_std[-1] = 1.0
    delta = np.minimum(q_std, p_std) / cfg.resolution
    wide = cfg.window * np.maximum(q_std, p_std)
    # keep every table comfortably inside the coder precision
    delta = np.maximum(delta, 2.0 * wide / (cfg.max_bins() - 2))
    half = np.ceil(wide / delta).astype(np.int64)
    return LatentGrid(delta, half, g, q_std, p_std)


# --- vectorised Gaussian coding on the lattice -------------------------------------------------


class _Table:
    """Per-lane windowed Gaussian with closed-form cumulative counts."""

    def __init__(self, mean, std, delta: float, half: int, escape: bool, precision: int):
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self.std = np.broadcast_to(np.asarray(std, dtype=float), self.mean.shape)
        self.delta = float(delta)
        self.half = int(half)
        self.bins = 2 * self.half + 1
        self.escape = escape
        self.total = 1 << precision
        self.scale = self.total - self.bins - (1 if escape else 0)
        if self.scale <= 0:
            raise CodingError("window has more bins than the coder precision allows")
        self.base = np.rint(self.mean / self.delta).astype(np.int64) - self.half
        self._f0 = self._cdf_at(np.zeros_like(self.base))
        self._fz = self._cdf_at(np.full_like(self.base, self.bins)) - self._f0

    def _cdf_at(self, k):
        return ndtr(((self.base + k - 0.5) * self.delta - self.mean) / self.std)

    def cum(self, k) -> np.ndarray:
        """C(k) for k in [0, bins]; C(bins) = total - (escape count)."""
        k = np.asarray(k, dtype=np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            gk = (self._cdf_at(k) - self._f0) / self._fz
        gk = np.where(np.isfinite(gk), gk, k / self.bins)
        gk = np.clip(gk, 0.0, 1.0)
        gk = np.where(k >= self.bins, 1.0, np.where(k <= 0, 0.0, gk))
        return (np.floor(gk * self.scale).astype(np.int64) + k).astype(np.uint64)

    def push(self, state: AnsState, n) -> AnsState:
        k = np.asarray(n, dtype=np.int64).reshape(-1) - self.base
        inside = (k >= 0) & (k < self.bins)
        if not self.escape and not np.all(inside):
            raise CodingError("latent outside a table that has no escape symbol")
        kk = np.where(inside, k, 0)
        lo, hi = self.cum(kk), self.cum(kk + 1)
        if self.escape and not np.all(inside):
            state = _push_raw(state, np.asarray(n, dtype=np.int64).reshape(-1), ~inside)
            esc = np.uint64(self.total - 1)
            lo = np.where(inside, lo, esc)
            hi = np.where(inside, hi, np.uint64(self.total))
        return ans.push_range(state, lo, hi - lo)

    def pop(self, state: AnsState) -> tuple[np.ndarray, AnsState]:
        cf = ans.peek(state)
        lo = np.zeros(self.mean.shape, dtype=np.int64)
        hi = np.full(self.mean.shape, self.bins, dtype=np.int64)
        top = self.cum(hi)
        escaped = cf >= top
        while True:
            active = hi - lo > 1
            if not active.any():
                break
            mid = (lo + hi) // 2
            go_up = self.cum(mid) <= cf
            lo = np.where(active & go_up, mid, lo)
            hi = np.where(active & ~go_up, mid, hi)
        start, stop = self.cum(lo), self.cum(lo + 1)
        if escaped.any():
            start = np.where(escaped, top, start)
            stop = np.where(escaped, np.uint64(self.total), stop)
        state = ans.pop_range(state, start, stop - start)
        n = self.base + lo
        if escaped.any():
            raw, state = _pop_raw(state, escaped)
            n = np.where(escaped, raw, n)
        return n, state


def _push_raw(state: AnsState, n, mask):
    """Push lattice indices for masked lanes as fixed-size chunks; other lanes push nothing."""
    if np.any(np.abs(n[mask]) >= RAW_OFFSET):
        raise CodingError("latent too far from the origin to escape-code")
    v = (n + RAW_OFFSET).astype(np.uint64)
    shift = state.config.precision - RAW_CHUNK_BITS
    full = np.uint64(1 << state.config.precision)
    for c in range(RAW_CHUNKS):
        chunk = (v >> np.uint64(RAW_CHUNK_BITS * c)) & np.uint64((1 << RAW_CHUNK_BITS) - 1)
        start = np.where(mask, chunk << np.uint64(shift), np.uint64(0))
        freq = np.where(mask, np.uint64(1 << shift), full)
        state = ans.push_range(state, start, freq)
    return state


def _pop_raw(state: AnsState, mask):
    shift = state.config.precision - RAW_CHUNK_BITS
    full = np.uint64(1 << state.config.precision)
    v = np.zeros(state.lanes, dtype=np.uint64)
    for c in reversed(range(RAW_CHUNKS)):
        chunk = ans.peek(state) >> np.uint64(shift)
        start = np.where(mask, chunk << np.uint64(shift), np.uint64(0))
        freq = np.where(mask, np.uint64(1 << shift), full)
        state = ans.pop_range(state, start, freq)
        v |= np.where(mask, chunk, np.uint64(0)) << np.uint64(RAW_CHUNK_BITS * c)
    return v.astype(np.int64) - RAW_OFFSET, state


def _categorical_cum(logp, precision):
    """(lanes, V+1) cumulative counts with at least one count per symbol."""
    V = logp.shape[-1]
    cdf = np.concatenate([np.zeros(logp.shape[:-1] + (1,)), np.cumsum(np.exp(logp), axis=-1)], axis=-1)
    cdf = np.clip(cdf / cdf[..., -1:], 0.0, 1.0)
    cdf[..., -1] = 1.0
    scale = (1 << precision) - V
    return (np.floor(cdf * scale).astype(np.int64) + np.arange(V + 1)).astype(np.uint64)


def _push_categorical(state, sym, cum):
    lo = np.take_along_axis(cum, sym[:, None], axis=-1)[:, 0]
    hi = np.take_along_axis(cum, sym[:, None] + 1, axis=-1)[:, 0]
    return ans.push_range(state, lo, hi - lo)


def _pop_categorical(state, cum):
    cf = ans.peek(state)
    sym = (cum[:, 1:] <= cf[:, None]).sum(axis=-1)
    lo = np.take_along_axis(cum, sym[:, None], axis=-1)[:, 0]
    hi = np.take_along_axis(cum, sym[:, None] + 1, axis=-1)[:, 0]
    return sym, ans.pop_range(state, lo, hi - lo)


# --- cleaning ---------------------------------------------------------------------------------


def clean_bits(words: np.ndarray, seed: int, op: int = 0, bits: int = 32) -> np.ndarray:
    """XOR ``words`` with a pseudorandom word stream determined by (seed, op)."""
    words = np.asarray(words)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, op])))
    pad = rng.integers(0, 1 << bits, size=words.shape, dtype=np.uint64)
    return (words.astype(np.uint64) ^ pad).astype(words.dtype)


def clean_state(state: AnsState, seed: int, op: int) -> AnsState:
    """Clean the low half of every head and the top ``lanes`` stream words."""
    cfg = state.config
    low = cfg.state_bits - cfg.word_bits
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, op])))
    pad = rng.integers(0, 1 << low, size=state.lanes, dtype=np.uint64)
    head = state.head ^ pad
    k = min(state.lanes, state.stream_words)
    words, stack = ans._stack_pop(state.stack, k)
    wpad = rng.integers(0, 1 << cfg.word_bits, size=k, dtype=np.uint64)
    return AnsState(head, ans._stack_push(stack, words ^ wpad), cfg)


# --- model wrapper --------------------------------------------------------------------------


@dataclass
class CodecModel:
    schedule: NoiseSchedule
    denoiser: DenoiserParams
    T: int
    V: int

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.schedule.fingerprint())
        for name in sorted(self.denoiser.weights):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.denoiser.weights[name].value, dtype="<f8").tobytes())
        h.update(repr(sorted(self.denoiser.config_dict().items())).encode())
        return h.digest()


def _recon_logp(z0, g0, V):
    """log p(x_i = v | z_0i) for every lane, shape (lanes, V)."""
    levels = grid_levels(V)
    a = math.sqrt(expit(-g0))
    var = expit(g0)
    logits = -((z0[:, None] - a * levels[None, :]) ** 2) / (2.0 * var)
    return log_softmax(logits, axis=-1)


def _reverse_mean(model: CodecModel, z_i, i, grid: LatentGrid):
    g_t, g_s = grid.gammas[i], grid.gammas[i - 1]
    eps_hat = predict_noise_value(model.denoiser, z_i, g_t)
    return np.asarray(reverse_from_gammas(z_i, eps_hat, g_s, g_t).mean)


def _alpha_ts(grid: LatentGrid, i):
    return float(np.asarray(transition_from_gammas(grid.gammas[i - 1], grid.gammas[i]).alpha_ts))


# --- blob -----------------------------------------------------------------------------------


@dataclass
class CompressedBlob:
    shape: tuple
    V: int
    T: int
    coder: CoderConfig
    resolution: float
    window: float
    clean: bool
    clean_seed: int
    init_bits: float  # information content of the auxiliary message
    model_hash: bytes
    head: np.ndarray
    words: np.ndarray
    version: int = VERSION

    @property
    def payload_bits(self) -> float:
        return float(np.log2(self.head.astype(np.float64)).sum()) + self.words.size * self.coder.word_bits

    @property
    def stored_bits(self) -> int:
        return self.head.size * self.coder.state_bits + self.words.size * self.coder.word_bits

    @property
    def n_scalars(self) -> int:
        return int(np.prod(self.shape))

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<B", self.version))
        out.write(struct.pack("<B", len(self.shape)))
        out.write(struct.pack(f"<{len(self.shape)}Q", *self.shape))
        c = self.coder
        out.write(struct.pack("<IIBBB", self.V, self.T, c.state_bits, c.word_bits, c.precision))
        out.write(struct.pack("<ddBQd", self.resolution, self.window, int(self.clean),
                              self.clean_seed, self.init_bits))
        out.write(struct.pack("<32s", self.model_hash))
        out.write(struct.pack("<QQ", self.head.size, self.words.size))
        out.write(np.ascontiguousarray(self.head, dtype="<u8").tobytes())
        wdt = np.dtype(c.word_dtype).newbyteorder("<")
        out.write(np.ascontiguousarray(self.words).astype(wdt).tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        try:
            buf = io.BytesIO(data)
            if buf.read(4) != MAGIC:
                raise FormatError("bad magic")
            (version,) = struct.unpack("<B", buf.read(1))
            if version != VERSION:
                raise FormatError(f"unsupported blob version {version}")
            (nd,) = struct.unpack("<B", buf.read(1))
            shape = struct.unpack(f"<{nd}Q", buf.read(8 * nd))
            V, T, sb, wb, prec = struct.unpack("<IIBBB", buf.read(11))
            res, win, clean, seed, init_bits = struct.unpack("<ddBQd", buf.read(33))
            (mh,) = struct.unpack("<32s", buf.read(32))
            nh, nw = struct.unpack("<QQ", buf.read(16))
            coder = CoderConfig(sb, wb, prec)
            head = np.frombuffer(buf.read(8 * nh), dtype="<u8").astype(np.uint64)
            wdt = np.dtype(coder.word_dtype).newbyteorder("<")
            raw = buf.read(wdt.itemsize * nw)
            if head.size != nh or len(raw) != wdt.itemsize * nw or buf.read(1):
                raise FormatError("truncated or oversized payload")
            words = np.frombuffer(raw, dtype=wdt).astype(np.uint64)
        except struct.error as e:
            raise FormatError(f"malformed header: {e}") from None
        return cls(tuple(int(s) for s in shape), V, T, coder, res, win, bool(clean), seed, init_bits,
                   mh, head, words, version)


def net_bpd(blob: CompressedBlob, d: int | None = None) -> float:
    """(message bits - initial auxiliary bits) / number of data scalars."""
    if not isinstance(blob, CompressedBlob):
        raise FormatError("not a compressed blob")
    d = blob.n_scalars if d is None else d
    return (blob.payload_bits - blob.init_bits) / d


# --- encode / decode ---------------------------------------------------------------------------


def bbans_encode(x, model: CodecModel, seed: int, cfg: CodecConfig | None = None) -> CompressedBlob:
    """Compress a batch ``x`` of shape (n, d) on the model's level grid.

    Raises UnderflowError naming the smallest sufficient ``init_words`` if the
    auxiliary message runs dry.
    """
    cfg = cfg or CodecConfig()
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.denoiser.d:
        raise ParameterError(f"expected data of shape (n, {model.denoiser.d})")
    try:
        return _encode(x, model, seed, cfg)
    except UnderflowError:
        pass
    need = cfg.init_words + 1
    while need <= 64 * max(cfg.init_words, 1):
        try:
            _encode(x, model, seed, replace(cfg, init_words=need))
            break
        except UnderflowError:
            need *= 2
    lanes = x.size
    raise UnderflowError(f"auxiliary message exhausted with init_words={cfg.init_words}; "
                         f"init_words={need} ({need * lanes * cfg.coder.word_bits} initial stream bits) suffices")


def _encode(x, model: CodecModel, seed: int, cfg: CodecConfig) -> CompressedBlob:
    idx = to_indices(x, model.V).reshape(-1)
    n, d = x.shape
    T, P = model.T, cfg.coder.precision
    grid = latent_grid(model.schedule, T, cfg)
    rng = np.random.default_rng(seed)
    state = ans.random_state(n * d, cfg.init_words * n * d, rng, cfg.coder)
    init_bits = state.content_bits()
    clean_seed = int(rng.integers(0, 2**63))

    def maybe_clean(st, op):
        return clean_state(st, clean_seed, op) if cfg.clean else st

    a0 = math.sqrt(expit(-grid.gammas[0]))
    state = maybe_clean(state, 0)
    q0 = _Table(a0 * x.reshape(-1), grid.q_std[0], grid.delta[0], grid.half[0], False, P)
    n_prev, state = q0.pop(state)
    z_prev = n_prev * grid.delta[0]
    state = _push_categorical(state, idx, _categorical_cum(_recon_logp(z_prev, grid.gammas[0], model.V), P))
    for i in range(1, T + 1):
        state = maybe_clean(state, i)
        q = _Table(_alpha_ts(grid, i) * z_prev, grid.q_std[i], grid.delta[i], grid.half[i], False, P)
        n_i, state = q.pop(state)
        z_i = n_i * grid.delta[i]
        pm = _reverse_mean(model, z_i.reshape(n, d), i, grid).reshape(-1)
        p = _Table(pm, grid.p_std[i - 1], grid.delta[i - 1], grid.half[i - 1], True, P)
        state = p.push(state, n_prev)
        n_prev, z_prev = n_i, z_i
    prior = _Table(np.zeros(n * d), 1.0, grid.delta[T], grid.half[T], True, P)
    state = prior.push(state, n_prev)
    return CompressedBlob((n, d), model.V, T, cfg.coder, cfg.resolution, cfg.window, cfg.clean,
                          clean_seed, init_bits, model.fingerprint(), state.head.copy(),
                          state.stream().astype(np.uint64))


def bbans_decode(blob: CompressedBlob, model: CodecModel, return_state: bool = False):
    """Invert ``bbans_encode``; refuses blobs made with a different model."""
    if blob.model_hash != model.fingerprint():
        raise MismatchError("blob was encoded with a different model checkpoint")
    if blob.V != model.V or blob.T != model.T:
        raise MismatchError("blob and model disagree on V or T_eval")
    cfg = CodecConfig(blob.coder, blob.resolution, blob.window, blob.clean)
    n, d = blob.shape
    T, P = blob.T, blob.coder.precision
    grid = latent_grid(model.schedule, T, cfg)
    state = ans.from_parts(blob.head, blob.words, blob.coder)

    def maybe_clean(st, op):
        return clean_state(st, blob.clean_seed, op) if blob.clean else st

    prior = _Table(np.zeros(n * d), 1.0, grid.delta[T], grid.half[T], True, P)
    n_i, state = prior.pop(state)
    z_i = n_i * grid.delta[T]
    for i in range(T, 0, -1):
        pm = _reverse_mean(model, z_i.reshape(n, d), i, grid).reshape(-1)
        p = _Table(pm, grid.p_std[i - 1], grid.delta[i - 1], grid.half[i - 1], True, P)
        n_prev, state = p.pop(state)
        z_prev = n_prev * grid.delta[i - 1]
        q = _Table(_alpha_ts(grid, i) * z_prev, grid.q_std[i], grid.delta[i], grid.half[i], False, P)
        state = q.push(state, n_i)
        state = maybe_clean(state, i)
        n_i, z_i = n_prev, z_prev
    sym, state = _pop_categorical(state, _categorical_cum(_recon_logp(z_i, grid.gammas[0], model.V), P))
    x = grid_levels(model.V)[sym]
    a0 = math.sqrt(expit(-grid.gammas[0]))
    q0 = _Table(a0 * x, grid.q_std[0], grid.delta[0], grid.half[0], False, P)
    state = q0.push(state, n_i)
    state = maybe_clean(state, 0)
    x = x.reshape(n, d)
    return (x, state) if return_state else x
