import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vdmkit import autodiff as ad
from vdmkit.errors import EvaluationError, MissingInputError, RankError, ShapeError

import oracles

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_forward_examples():
    assert ad.sigmoid(ad.Parameter(0.0)).value == 0.5
    assert ad.expm1(ad.Parameter(0.0)).value == 0.0
    assert ad.softplus(ad.Parameter(0.0)).value == pytest.approx(oracles.SOFTPLUS_0, abs=1e-15)


def test_backward_examples():
    x = ad.Parameter(3.0)
    ad.backward(ad.square(x))
    assert x.grad == 6.0

    w = ad.Parameter(0.0)
    ad.backward(ad.sigmoid(w))
    assert w.grad == pytest.approx(oracles.SIGMOID_PRIME_0, abs=1e-15)

    p = ad.Parameter(np.ones(3))
    ad.backward(ad.sum_(ad.constant(np.arange(3.0))))
    assert np.all(p.grad == 0)


def test_backward_accumulates_until_reset():
    x = ad.Parameter(2.0)
    for _ in range(3):
        ad.backward(x * x)
    assert x.grad == 12.0
    x.zero_grad()
    assert x.grad == 0.0 and x.grad.shape == x.value.shape


def test_gradients_leave_accumulators_alone():
    x, y = ad.Parameter(2.0), ad.Parameter(5.0)
    gx, gy = ad.gradients(x * x, [x, y])
    assert gx == 4.0 and gy == 0.0
    assert x.grad == 0.0


def test_errors():
    with pytest.raises(RankError):
        ad.backward(ad.Parameter(np.ones(3)) * 2.0)
    with pytest.raises(ShapeError):
        ad.matmul(ad.Parameter(np.ones((2, 3))), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.Parameter(np.ones(3)) + np.ones(4)
    graph = ad.ComputationGraph(ad.Input("a", 1.0) * ad.Parameter(2.0))
    with pytest.raises(MissingInputError):
        graph.evaluate({})
    with pytest.raises(EvaluationError), np.errstate(invalid="ignore"):
        ad.finite_difference_check(lambda v: ad.log(v), np.array([1e-6]), step=1e-5)


def test_finite_difference_examples():
    assert ad.finite_difference_check(lambda v: ad.square(v), np.array(3.0)) < 1e-6
    assert ad.finite_difference_check(lambda v: ad.constant(5.0) * 1.0, np.array(1.0)) == 0.0


def test_graph_replay_is_deterministic():
    a, b = ad.Input("a", np.zeros((1, 2))), ad.Input("b", np.zeros((1, 2)))
    w = ad.Parameter(np.array([[0.5, -1.0], [2.0, 0.1]]))
    out = ad.sum_(ad.softplus(ad.matmul(a, w)) * ad.sin(b))
    graph = ad.ComputationGraph(out)
    binds = {"a": np.array([[0.3, -0.2]]), "b": np.array([[1.0, 2.0]])}
    v1 = ad.evaluate(graph, binds).copy()
    v2 = ad.evaluate(graph, binds).copy()
    assert v1.tobytes() == v2.tobytes()
    assert graph.inputs.keys() == {"a", "b"} and graph.parameters == [w]


def test_node_ids_are_topological():
    x = ad.Parameter(1.5)
    out = ad.exp(ad.log(x) * x) + x
    for node in ad.ComputationGraph(out).nodes:
        assert all(p.id < node.id for p in node.parents)


UNARY = {
    "exp": (ad.exp, None), "log": (ad.log, "pos"), "expm1": (ad.expm1, None), "log1p": (ad.log1p, "pos"),
    "softplus": (ad.softplus, None), "sigmoid": (ad.sigmoid, None), "sin": (ad.sin, None),
    "cos": (ad.cos, None), "square": (ad.square, None), "sqrt": (ad.sqrt, "pos"), "abs": (ad.abs_, "nz"),
    "tanh": (ad.tanh, None), "silu": (ad.silu, None), "neg": (ad.neg, None),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_match_central_differences(name):
    fn, dom = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    pts = rng.uniform(-2, 2, 100)
    if dom == "pos":
        pts = np.abs(pts) + 1e-3
    if dom == "nz":
        pts = np.where(np.abs(pts) < 1e-3, 0.5, pts)
    for p in pts:
        assert ad.finite_difference_check(lambda v: fn(v), np.array(p)) < 1e-6


BINARY = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitives_match_central_differences(name):
    fn = BINARY[name]
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b = rng.uniform(-2, 2, 2)
        if name == "div" and abs(b) < 1e-3:
            b = 0.5
        assert ad.finite_difference_check(lambda v: fn(v[0], v[1]), np.array([a, b])) < 1e-6


def test_reductions_and_shape_ops():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(3, 2))
    checks = [
        lambda v: ad.sum_(ad.matmul(ad.reshape(v, (2, 3)), b)),
        lambda v: ad.mean(ad.square(v)),
        lambda v: ad.logsumexp(ad.reshape(v, (2, 3)), axis=-1) * np.array([1.0, 2.0]),
        lambda v: ad.sum_(ad.transpose(ad.reshape(v, (2, 3))) * b),
        lambda v: ad.sum_(ad.take(v, np.array([0, 0, 4]))),
        lambda v: ad.sum_(ad.concat([v, ad.square(v)], axis=-1)),
        lambda v: ad.sum_(ad.where(np.arange(6) % 2 == 0, v, ad.exp(v))),
        lambda v: ad.sum_(ad.maximum(v, 0.1)),
    ]
    for k, f in enumerate(checks):
        x = rng.normal(size=6)
        x[np.abs(x - 0.1) < 1e-2] += 0.1
        out = f(x)
        assert ad.finite_difference_check(lambda v: ad.sum_(f(v)) if np.ndim(ad.value_of(f(v))) else f(v),
                                          x) < 1e-6, k
        assert np.all(np.isfinite(ad.value_of(out)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 5, elements=finite), finite, finite)
def test_backward_is_linear(x, a, b):
    def f(v):
        return ad.sum_(ad.sin(v) * v)

    def g(v):
        return ad.sum_(ad.softplus(v))

    p = ad.Parameter(x)
    ad.backward(f(p))
    gf = p.grad.copy()
    p.zero_grad()
    ad.backward(g(p))
    gg = p.grad.copy()
    p.zero_grad()
    ad.backward(a * f(p) + b * g(p))
    assert np.allclose(p.grad, a * gf + b * gg, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite))
def test_forward_values_finite_and_repeatable(x):
    w = ad.Parameter(np.linspace(-1, 1, 12).reshape(3, 4))
    inp = ad.Input("x", np.zeros((2, 3)))
    graph = ad.ComputationGraph(ad.sum_(ad.silu(ad.matmul(inp, w))))
    v1 = float(graph.evaluate({"x": x}))
    v2 = float(graph.evaluate({"x": x}))
    assert np.isfinite(v1) and v1 == v2


def test_no_grad_records_nothing():
    x = ad.Parameter(1.0)
    with ad.no_grad():
        y = ad.exp(x)
    assert y.parents == ()
