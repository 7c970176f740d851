"""Vectorised range-variant asymmetric numeral systems (rANS).

A message is a vector of ``lanes`` coder heads plus one shared stack of
flushed words.  Every push/pop acts on all lanes at once; lanes whose head
leaves the normalisation interval exchange exactly one word with the stack,
in lane order.  Pushing words and popping them back therefore follows strict
stack discipline even when ops on different lanes interleave.

The coder is parameterised by the head width, word width and table precision.
Heads live in [L, L * 2^word_bits) with L = 2^(state_bits - word_bits).
Precision should sit a few bits below log2(L): heads are roughly 1/x
distributed, so with 2^precision close to L the low slots of each block are
favoured, popped symbols are biased and pushes pay visible overhead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodingError, ConfigurationError, UnderflowError


@dataclass(frozen=True)
class CoderConfig:
    state_bits: int = 64
    word_bits: int = 32
    precision: int = 28

    def __post_init__(self):
        if self.state_bits > 64 or self.word_bits * 2 != self.state_bits:
            raise ConfigurationError("state must be two words wide and at most 64 bits")
        if not 1 <= self.precision <= self.word_bits:
            raise ConfigurationError("precision must lie in [1, word_bits]")

    @property
    def lower(self) -> int:
        return 1 << (self.state_bits - self.word_bits)

    @property
    def word_dtype(self):
        return np.uint32 if self.word_bits == 32 else np.uint16 if self.word_bits == 16 else np.uint64


COMPACT_CODER = CoderConfig(32, 16, 16)
DEFAULT_CODER = CoderConfig()


class _Stack:
    """Persistent stack of word chunks (cons list), so states can be copied cheaply."""

    __slots__ = ("chunk", "rest", "size")

    def __init__(self, chunk: np.ndarray, rest: "_Stack | None"):
        self.chunk = chunk
        self.rest = rest
        self.size = chunk.size + (rest.size if rest is not None else 0)


def _stack_push(stack, words):
    if words.size == 0:
        return stack
    return _Stack(words, stack)


def _stack_pop(stack, k):
    """Remove the top ``k`` words; returns (words in push order, remaining stack)."""
    if k == 0:
        return np.empty(0, dtype=np.uint64), stack
    if stack is None or stack.size < k:
        raise UnderflowError(f"stream exhausted: need {k} word(s), have {0 if stack is None else stack.size}")
    parts, need = [], k
    while need:
        c = stack.chunk
        if c.size <= need:
            parts.append(c)
            need -= c.size
            stack = stack.rest
        else:
            parts.append(c[c.size - need:])
            stack = _Stack(c[: c.size - need], stack.rest)
            need = 0
    return np.concatenate(parts[::-1]).astype(np.uint64), stack


@dataclass
class AnsState:
    head: np.ndarray  # uint64, one coder state per lane
    stack: _Stack | None
    config: CoderConfig = DEFAULT_CODER

    @property
    def lanes(self) -> int:
        return self.head.size

    @property
    def stream_words(self) -> int:
        return 0 if self.stack is None else self.stack.size

    def bit_length(self) -> int:
        """Total message size: all heads at full width plus the flushed words."""
        return self.lanes * self.config.state_bits + self.stream_words * self.config.word_bits

    def content_bits(self) -> float:
        """Information held by the message: sum of log2(head) plus the flushed words.

        Unlike ``bit_length`` this moves smoothly with every push/pop, so the
        difference between two states is the exact codelength of the ops between
        them (up to the fractional bits of the heads).
        """
        return float(np.log2(self.head.astype(np.float64)).sum()) + self.stream_words * self.config.word_bits

    def stream(self) -> np.ndarray:
        """Flushed words bottom-to-top."""
        parts, s = [], self.stack
        while s is not None:
            parts.append(s.chunk)
            s = s.rest
        if not parts:
            return np.empty(0, dtype=self.config.word_dtype)
        return np.concatenate(parts[::-1]).astype(self.config.word_dtype)

    def copy(self) -> "AnsState":
        return AnsState(self.head.copy(), self.stack, self.config)

    def same_as(self, other: "AnsState") -> bool:
        return (np.array_equal(self.head, other.head) and self.config == other.config
                and np.array_equal(self.stream(), other.stream()))


def empty_state(lanes: int, config: CoderConfig = DEFAULT_CODER) -> AnsState:
    """All heads at the lower bound, no words: the cheapest starting point."""
    return AnsState(np.full(lanes, config.lower, dtype=np.uint64), None, config)


def random_state(lanes: int, n_words: int, rng: np.random.Generator,
                 config: CoderConfig = DEFAULT_CODER) -> AnsState:
    """Heads uniform in the normalisation interval and ``n_words`` uniform stream words."""
    lo = config.lower
    head = rng.integers(lo, (lo << config.word_bits) - 1, size=lanes, dtype=np.uint64, endpoint=True)
    words = rng.integers(0, 1 << config.word_bits, size=n_words, dtype=np.uint64)
    return AnsState(head, _stack_push(None, words), config)


def from_parts(head, words, config: CoderConfig = DEFAULT_CODER) -> AnsState:
    return AnsState(np.asarray(head, dtype=np.uint64).copy(),
                    _stack_push(None, np.asarray(words, dtype=np.uint64)), config)


# --- core range operations --------------------------------------------------------------


def push_range(state: AnsState, start, freq) -> AnsState:
    """Encode symbols given their cumulative start and frequency (per lane)."""
    cfg = state.config
    start = np.broadcast_to(np.asarray(start, dtype=np.uint64), state.head.shape)
    freq = np.broadcast_to(np.asarray(freq, dtype=np.uint64), state.head.shape)
    if np.any(freq == 0):
        raise CodingError("cannot code a zero-frequency symbol")
    x = state.head
    # x >= freq * 2^(state_bits - precision), written so freq = 2^precision cannot overflow
    flush = (x >> np.uint64(cfg.state_bits - cfg.precision)) >= freq
    wb = np.uint64(cfg.word_bits)
    words = x[flush] & np.uint64((1 << cfg.word_bits) - 1)
    x = np.where(flush, x >> wb, x)
    x = ((x // freq) << np.uint64(cfg.precision)) + (x % freq) + start
    return AnsState(x, _stack_push(state.stack, words), cfg)


def peek(state: AnsState) -> np.ndarray:
    """Cumulative-frequency slot each lane would decode from."""
    return state.head & np.uint64((1 << state.config.precision) - 1)


def pop_range(state: AnsState, start, freq) -> AnsState:
    """Advance past symbols already identified from ``peek`` (per-lane start/freq)."""
    cfg = state.config
    start = np.broadcast_to(np.asarray(start, dtype=np.uint64), state.head.shape)
    freq = np.broadcast_to(np.asarray(freq, dtype=np.uint64), state.head.shape)
    cf = peek(state)
    x = freq * (state.head >> np.uint64(cfg.precision)) + cf - start
    refill = x < np.uint64(cfg.lower)
    words, stack = _stack_pop(state.stack, int(refill.sum()))
    x = x.copy()
    x[refill] = (x[refill] << np.uint64(cfg.word_bits)) | words
    return AnsState(x, stack, cfg)


# --- table interface ----------------------------------------------------------------------


def _cdf(pmf, precision):
    pmf = np.asarray(pmf)
    if np.any(pmf < 0) or np.any(pmf.sum(axis=-1) != (1 << precision)):
        raise CodingError(f"frequency table must be nonnegative and sum to 2^{precision}")
    cdf = np.zeros(pmf.shape[:-1] + (pmf.shape[-1] + 1,), dtype=np.int64)
    np.cumsum(pmf, axis=-1, out=cdf[..., 1:])
    return cdf


def ans_push(state: AnsState, symbol, pmf) -> AnsState:
    """Push ``symbol`` (per lane) with an integer frequency table (shared or one row per lane)."""
    cdf = _cdf(pmf, state.config.precision)
    sym = np.broadcast_to(np.asarray(symbol, dtype=np.int64), state.head.shape)
    if np.any(sym < 0) or np.any(sym >= cdf.shape[-1] - 1):
        raise CodingError("symbol outside the table")
    cdf2 = np.broadcast_to(cdf, state.head.shape + cdf.shape[-1:])
    lo = np.take_along_axis(cdf2, sym[:, None], axis=-1)[:, 0]
    hi = np.take_along_axis(cdf2, sym[:, None] + 1, axis=-1)[:, 0]
    return push_range(state, lo, hi - lo)


def ans_pop(state: AnsState, pmf) -> tuple[np.ndarray, AnsState]:
    """Decode one symbol per lane with the given table; exact inverse of ``ans_push``."""
    cdf = _cdf(pmf, state.config.precision)
    cf = peek(state).astype(np.int64)
    cdf2 = np.broadcast_to(cdf, state.head.shape + cdf.shape[-1:])
    sym = (cdf2[:, 1:] <= cf[:, None]).sum(axis=-1)
    lo = np.take_along_axis(cdf2, sym[:, None], axis=-1)[:, 0]
    hi = np.take_along_axis(cdf2, sym[:, None] + 1, axis=-1)[:, 0]
    return sym, pop_range(state, lo, hi - lo)


def push_uniform(state: AnsState, value, bits: int) -> AnsState:
    """Push integers in [0, 2^bits) at a flat cost of ``bits`` each (bits <= precision)."""
    shift = state.config.precision - bits
    return push_range(state, np.asarray(value, dtype=np.uint64) << np.uint64(shift), 1 << shift)


def pop_uniform(state: AnsState, bits: int) -> tuple[np.ndarray, AnsState]:
    shift = state.config.precision - bits
    v = peek(state) >> np.uint64(shift)
    return v, pop_range(state, v << np.uint64(shift), 1 << shift)
