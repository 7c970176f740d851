"""Tape-based reverse-mode automatic differentiation over dense float arrays.

Every primitive call records a node (op kind, inputs, cached forward value) on
an implicit tape.  Node ids increase monotonically, so sorting the nodes
reachable from an output by id gives a topological order; ``backward`` walks
that order in reverse.

Primitives accept plain numpy arrays as well as tensors.  When no argument is a
``Tensor`` the primitive simply returns the numpy result, which lets the
diffusion algebra be written once and used both inside and outside a graph.

Gradients accumulate additively into ``Parameter.grad`` until ``zero_grad`` is
called explicitly.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import EvaluationError, MissingInputError, RankError, ShapeError

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording a tape."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(frozen=True)
class Primitive:
    name: str
    fwd: Callable
    # vjp(g, out, *input_values, **kw) -> tuple of input cotangents
    vjp: Callable


def _as_float(value):
    v = np.asarray(value)
    return v if v.dtype.kind == "f" else v.astype(np.float64)


class Tensor:
    __slots__ = ("value", "parents", "prim", "kwargs", "id", "__weakref__")
    # make numpy defer to our reflected operators instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, value, parents=(), prim=None, kwargs=None):
        self.value = _as_float(value)
        self.parents = tuple(parents)
        self.prim = prim
        self.kwargs = kwargs or {}
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        kind = self.prim.name if self.prim else type(self).__name__.lower()
        return f"<{kind} {self.shape} id={self.id}>"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Trainable leaf with an additive gradient accumulator."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = "param"):
        super().__init__(np.array(_as_float(value)))
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def assign(self, value):
        value = np.asarray(value, dtype=self.value.dtype)
        if value.shape != self.value.shape:
            raise ShapeError(f"{self.name}: cannot assign {value.shape} to {self.value.shape}")
        self.value = value.copy()


class Input(Tensor):
    """Named placeholder leaf whose value is supplied at evaluation time."""

    __slots__ = ("name",)

    def __init__(self, name: str, value=None):
        super().__init__(np.nan if value is None else value)
        self.name = name


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def constant(x) -> Tensor:
    """A leaf that blocks gradient flow (stop-gradient)."""
    return Tensor(value_of(x).copy())


def _apply(prim: Primitive, *inputs, **kwargs):
    if not any(isinstance(x, Tensor) for x in inputs):
        return _forward(prim, [np.asarray(x) for x in inputs], kwargs)
    vals = [value_of(x) for x in inputs]
    out = _forward(prim, vals, kwargs)
    if not _grad_enabled:
        return Tensor(out)
    parents = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    return Tensor(out, parents, prim, kwargs)


def _forward(prim, vals, kwargs):
    try:
        with np.errstate(over="ignore"):
            return prim.fwd(*vals, **kwargs)
    except ValueError as exc:
        raise ShapeError(f"{prim.name}: {exc}") from None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(name, fwd, ga, gb):
    def vjp(g, out, a, b):
        return (_unbroadcast(ga(g, out, a, b), np.shape(a)),
                _unbroadcast(gb(g, out, a, b), np.shape(b)))

    prim = Primitive(name, fwd, vjp)
    return lambda a, b: _apply(prim, a, b)


def _unary(name, fwd, dfn):
    prim = Primitive(name, fwd, lambda g, out, a: (g * dfn(out, a),))
    return lambda a: _apply(prim, a)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return special.expit(x)


add = _binary("add", np.add, lambda g, o, a, b: g, lambda g, o, a, b: g)
sub = _binary("sub", np.subtract, lambda g, o, a, b: g, lambda g, o, a, b: -g)
mul = _binary("mul", np.multiply, lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)
div = _binary("div", np.divide, lambda g, o, a, b: g / b, lambda g, o, a, b: -g * o / b)
maximum = _binary(
    "maximum", np.maximum,
    lambda g, o, a, b: g * (a >= b), lambda g, o, a, b: g * (a < b),
)

neg = _unary("neg", np.negative, lambda o, a: -1.0)
exp = _unary("exp", np.exp, lambda o, a: o)
log = _unary("log", np.log, lambda o, a: 1.0 / a)
expm1 = _unary("expm1", np.expm1, lambda o, a: o + 1.0)
log1p = _unary("log1p", np.log1p, lambda o, a: 1.0 / (1.0 + a))
softplus = _unary("softplus", _softplus, lambda o, a: _sigmoid(a))
sigmoid = _unary("sigmoid", _sigmoid, lambda o, a: o * (1.0 - o))
sin = _unary("sin", np.sin, lambda o, a: np.cos(a))
cos = _unary("cos", np.cos, lambda o, a: -np.sin(a))
square = _unary("square", np.square, lambda o, a: 2.0 * a)
sqrt = _unary("sqrt", np.sqrt, lambda o, a: 0.5 / o)
abs_ = _unary("abs", np.abs, lambda o, a: np.sign(a))
tanh = _unary("tanh", np.tanh, lambda o, a: 1.0 - o * o)
silu = _unary("silu", lambda x: x * _sigmoid(x),
              lambda o, a: _sigmoid(a) * (1.0 + a * (1.0 - _sigmoid(a))))


def _matmul_fwd(a, b):
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul operands must be at least 1-d")
    return np.matmul(a, b)


def _matmul_vjp(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return g[..., None] * b, np.tensordot(g, a, axes=(range(g.ndim), range(a.ndim - 1)))
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


_matmul = Primitive("matmul", _matmul_fwd, _matmul_vjp)


def matmul(a, b):
    return _apply(_matmul, a, b)


def _sum_vjp(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


_sum = Primitive("sum", lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims),
                 _sum_vjp)


def sum_(x, axis=None, keepdims=False):
    return _apply(_sum, x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    v = value_of(x)
    n = v.size if axis is None else np.prod([v.shape[a] for a in np.atleast_1d(axis)])
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def _lse_fwd(a, axis=-1):
    return special.logsumexp(a, axis=axis)


def _lse_vjp(g, out, a, axis=-1):
    return (np.expand_dims(g, axis) * np.exp(a - np.expand_dims(out, axis)),)


_lse = Primitive("logsumexp", _lse_fwd, _lse_vjp)


def logsumexp(x, axis=-1):
    return _apply(_lse, x, axis=axis)


_reshape = Primitive("reshape", lambda a, shape: np.reshape(a, shape),
                     lambda g, out, a, shape: (g.reshape(a.shape),))


def reshape(x, shape):
    return _apply(_reshape, x, shape=tuple(shape))


_transpose = Primitive("transpose", lambda a: np.swapaxes(a, -1, -2),
                       lambda g, out, a: (np.swapaxes(g, -1, -2),))


def transpose(x):
    return _apply(_transpose, x)


def _take_vjp(g, out, a, idx):
    ga = np.zeros_like(a)
    np.add.at(ga, idx, g)
    return (ga,)


_take = Primitive("take", lambda a, idx: a[idx], _take_vjp)


def take(x, idx):
    return _apply(_take, x, idx=idx)


def _concat_fwd(*xs, axis=-1):
    return np.concatenate(xs, axis=axis)


def _concat_vjp(g, out, *xs, axis=-1):
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, splits, axis=axis))


_concat = Primitive("concat", _concat_fwd, _concat_vjp)


def concat(xs: Sequence, axis=-1):
    return _apply(_concat, *xs, axis=axis)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    return add(mul(a, cond.astype(float)), mul(b, (~cond).astype(float)))


# ---------------------------------------------------------------------------
# graph traversal


def _reachable(out: Tensor) -> list[Tensor]:
    seen, stack, nodes = set(), [out], []
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        seen.add(n.id)
        nodes.append(n)
        stack.extend(n.parents)
    nodes.sort(key=lambda n: n.id)
    return nodes


def _backprop(out: Tensor, seed):
    """Yield (parameter, cotangent) for every reachable Parameter, once each."""
    if not isinstance(out, Tensor):
        raise EvaluationError("backward needs a Tensor output")
    if seed is None:
        if out.value.size != 1:
            raise RankError(f"backward from non-scalar output of shape {out.shape}")
        seed = np.ones_like(out.value)
    else:
        seed = np.broadcast_to(np.asarray(seed, dtype=out.value.dtype), out.shape)
    grads = {out.id: seed}
    for node in reversed(_reachable(out)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            yield node, g
        if node.prim is None:
            continue
        cots = node.prim.vjp(g, node.value, *(p.value for p in node.parents), **node.kwargs)
        for p, c in zip(node.parents, cots):
            if p.id in grads:
                grads[p.id] = grads[p.id] + c
            else:
                grads[p.id] = c


def backward(out: Tensor, seed=None):
    """Accumulate d(out)/d(param) into every reachable ``Parameter``.

    ``out`` must hold a single element unless an explicit cotangent ``seed``
    of matching shape is given.
    """
    for node, g in _backprop(out, seed):
        node.grad = node.grad + g


def gradients(out: Tensor, params, seed=None) -> list[np.ndarray]:
    """d(out)/d(params) without touching any accumulator; unreachable params get zeros."""
    params = list(params)
    found = {node.id: g for node, g in _backprop(out, seed)}
    return [np.broadcast_to(found.get(p.id, 0.0), p.value.shape).astype(float) for p in params]


class ComputationGraph:
    """Frozen view of the tape reachable from one output, replayable on new inputs."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _reachable(output)

    @property
    def inputs(self) -> dict[str, Input]:
        return {n.name: n for n in self.nodes if isinstance(n, Input)}

    @property
    def parameters(self) -> list[Parameter]:
        return [n for n in self.nodes if isinstance(n, Parameter)]

    def evaluate(self, bindings: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        bindings = dict(bindings or {})
        for n in self.nodes:
            if isinstance(n, Input):
                if n.name not in bindings:
                    raise MissingInputError(f"leaf {n.name!r} is unbound")
                n.value = np.asarray(bindings[n.name], dtype=float)
            elif n.prim is not None:
                n.value = _forward(n.prim, [p.value for p in n.parents], n.kwargs)
        return self.output.value

    def backward(self):
        backward(self.output)


def evaluate(graph: ComputationGraph, bindings: Mapping[str, np.ndarray] | None = None):
    return graph.evaluate(bindings)


def finite_difference_check(fn: Callable, point, step: float = 1e-5, eps_abs: float = 1e-12) -> float:
    """Max relative error between the tape gradient of ``fn`` and central differences.

    ``fn`` maps a tensor (or array) of the shape of ``point`` to a scalar.
    """
    point = np.array(point, dtype=float)
    p = Parameter(point, name="x")
    out = fn(p)
    if not isinstance(out, Tensor):
        analytic = np.zeros_like(point)
    else:
        backward(out)
        analytic = p.grad
    return _compare(lambda v: fn(v), point, analytic, step, eps_abs)


def _compare(fn, point, analytic, step, eps_abs):
    central = np.zeros_like(point)
    flat = point.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            xp, xm = flat.copy(), flat.copy()
            xp[k] += step
            xm[k] -= step
            fp = float(np.sum(value_of(fn(xp.reshape(point.shape)))))
            fm = float(np.sum(value_of(fn(xm.reshape(point.shape)))))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError("non-finite function value in finite-difference probe")
            central.reshape(-1)[k] = (fp - fm) / (2 * step)
    err = np.abs(analytic - central) / (np.abs(analytic) + np.abs(central) + eps_abs)
    return float(err.max()) if err.size else 0.0


def parameter_gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                             step: float = 1e-5, eps_abs: float = 1e-12,
                             max_coords: int | None = None, rng=None) -> float:
    """Finite-difference check of ``loss_fn`` w.r.t. each coordinate of ``params``.

    ``loss_fn`` closes over the parameters and is re-run for every probe.  With
    ``max_coords`` set, a random subset of coordinates per parameter is probed.
    """
    zero_grad(params)
    out = loss_fn()
    backward(out)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p in params:
            flat_idx = np.arange(p.value.size)
            if max_coords is not None and flat_idx.size > max_coords:
                flat_idx = rng.choice(flat_idx, max_coords, replace=False)
            base = p.value.copy()
            for k in flat_idx:
                vals = []
                for sgn in (1.0, -1.0):
                    v = base.copy().reshape(-1)
                    v[k] += sgn * step
                    p.value = v.reshape(base.shape)
                    vals.append(float(value_of(loss_fn())))
                p.value = base
                if not all(np.isfinite(vals)):
                    raise EvaluationError(f"non-finite probe for {p.name}")
                c = (vals[0] - vals[1]) / (2 * step)
                a = p.grad.reshape(-1)[k]
                worst = max(worst, abs(a - c) / (abs(a) + abs(c) + eps_abs))
    return worst
