"""Tape engine: op-level gradients, activation tables, determinism."""

import numpy as np
import pytest

from geonet import autodiff as ad
from geonet.autodiff import Tensor, act_nth
from geonet.errors import StructuralError, UnsupportedOrderError

from util import central_diff, rel_err


def test_add_mul_square_grads():
    a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([0.5, 4.0, -1.0]), requires_grad=True)
    loss = ad.tsum(ad.square(ad.add(ad.mul(a, b), a)))
    loss.backward()
    # d/da sum((ab + a)^2) = 2(ab + a)(b + 1)
    v = a.data * b.data + a.data
    assert np.allclose(a.grad, 2 * v * (b.data + 1))
    assert np.allclose(b.grad, 2 * v * a.data)


def test_linear_grads_match_fd():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    x = ad.constant(rng.normal(size=(5, 3)))
    loss = ad.tsum(ad.square(ad.linear(x, w, b)))
    loss.backward()

    def loss_of(wflat):
        wv = wflat.reshape(4, 3)
        y = x.data @ wv.T + b.data
        return (y * y).sum()

    for i in range(w.data.size):
        fd = central_diff(loss_of, w.data.ravel(), i, h=1e-5)
        assert rel_err(w.grad.ravel()[i], fd) < 1e-8


def test_take_rows_scatter_adds():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    idx = np.array([0, 2, 0, 0])
    y = ad.take_rows(x, idx)
    ad.tsum(y).backward()
    assert np.allclose(x.grad, [[3, 3], [0, 0], [1, 1]])


def test_slice_rows_grad():
    x = Tensor(np.arange(8.0), requires_grad=True)
    ad.tsum(ad.square(ad.slice_rows(x, 2, 5))).backward()
    want = np.zeros(8)
    want[2:5] = 2 * x.data[2:5]
    assert np.allclose(x.grad, want)


def test_shared_gradient_never_aliases():
    # One upstream gradient fans out to two parents; accumulating into one
    # parent must not corrupt the other.
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    s = ad.add(a, b)
    loss = ad.tsum(ad.add(s, s))
    loss.backward()
    assert np.allclose(a.grad, 2.0)
    assert np.allclose(b.grad, 2.0)


def test_no_grad_disables_tape():
    a = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.mul(a, a)
    assert out._backward is None and not out.requires_grad


def test_scalar_operator_sugar():
    a = Tensor(np.array([2.0]), requires_grad=True)
    out = 3.0 * a + 1.0 - a * 0.5
    out.backward()
    assert np.allclose(out.data, 6.0)
    assert np.allclose(a.grad, 2.5)


def test_shape_mismatch_raises():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(4))
    with pytest.raises(StructuralError):
        ad.add(a, b)
    with pytest.raises(StructuralError):
        ad.mul(a, b)


@pytest.mark.parametrize("kind", ["tanh", "gelu"])
def test_activation_derivative_chain(kind):
    # sigma^(n) must be the derivative of sigma^(n-1), n = 1..4; the bound
    # sits at the FD oracle's own roundoff floor.
    xs = np.linspace(-2.5, 2.5, 11)
    for n in range(1, 5):
        for x in xs:
            fd = central_diff(lambda v: act_nth(kind, n - 1, v[0]), np.array([x]), 0)
            assert rel_err(act_nth(kind, n, np.float64(x)), fd) < 1e-6


@pytest.mark.parametrize("kind", ["tanh", "gelu"])
def test_act_family_consistent_with_act_nth(kind):
    x = Tensor(np.linspace(-2, 2, 7), requires_grad=True)
    family = ad.act_family(x, kind, 3)
    for n, out in enumerate(family):
        assert np.allclose(out.data, act_nth(kind, n, x.data))


def test_act_order_cap():
    x = Tensor(np.zeros(3))
    with pytest.raises(UnsupportedOrderError):
        ad.act(x, "tanh", 4)
    with pytest.raises(UnsupportedOrderError):
        act_nth("tanh", 5, np.zeros(3))


def test_unknown_activation_rejected():
    with pytest.raises(StructuralError):
        act_nth("relu", 0, np.zeros(2))


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
    x = ad.constant(rng.normal(size=(40, 6)))

    def run():
        w.grad = None
        h = ad.act(ad.linear(x, w), "tanh", 0)
        ad.tsum(ad.square(h)).backward()
        return w.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)
