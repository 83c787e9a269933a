"""Backprop entry point and Adam update behavior."""

import numpy as np
import pytest

from geonet import autodiff as ad
from geonet.errors import NonFiniteError, StructuralError
from geonet.nets import MLPParams, mlp_forward
from geonet.optim import Adam, GradBuffer, backprop


def _net(seed=0, widths=(3, 5, 2)):
    return MLPParams.init(list(widths), "tanh", np.random.default_rng(seed))


def test_zero_loss_zero_gradients():
    net = _net()
    out = mlp_forward(net, np.zeros((4, 3)))
    loss = ad.scale(ad.tsum(ad.square(out)), 0.0)
    bufs = backprop(loss, [net])
    for arr in bufs[0].arrays():
        assert np.array_equal(arr, np.zeros_like(arr))


def test_loss_on_final_bias_only():
    net = _net()
    b_last = net.biases[-1]
    loss = ad.tsum(ad.square(b_last))
    bufs = backprop(loss, [net])
    assert np.allclose(bufs[0].biases[-1], 2 * b_last.data)
    for w in bufs[0].weights:
        assert np.array_equal(w, np.zeros_like(w))


def test_backprop_requires_scalar():
    net = _net()
    out = mlp_forward(net, np.zeros((4, 3)))
    with pytest.raises(StructuralError):
        backprop(out, [net])


def test_gradbuffer_shapes_mirror_params():
    net = _net()
    buf = GradBuffer.from_params(net)
    for got, tensor in zip(buf.arrays(), net.parameters()):
        assert got.shape == tensor.data.shape


def test_adam_zero_gradients_keep_params():
    net = _net(1)
    before = [t.data.copy() for t in net.parameters()]
    opt = Adam(net.parameters(), lr=0.1)
    opt.step([np.zeros_like(t.data) for t in net.parameters()])
    assert opt.state.step == 1
    for t, b in zip(net.parameters(), before):
        assert np.array_equal(t.data, b)


def test_adam_constant_gradient_limit_step():
    # With a constant gradient the update tends to lr * sign(g).
    t = ad.Tensor(np.array([0.0, 0.0]), requires_grad=True)
    opt = Adam([t], lr=1e-2)
    g = np.array([3.0, -0.25])
    prev = t.data.copy()
    for _ in range(400):
        prev = t.data.copy()
        opt.step([g])
    step = t.data - prev
    assert np.allclose(step, -1e-2 * np.sign(g), rtol=1e-6)


def test_adam_single_step_matches_scripted_reference():
    # Independent scripted Adam step (bias-corrected, eps outside the sqrt).
    rng = np.random.default_rng(7)
    theta = rng.normal(size=6)
    g = rng.normal(size=6)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    want = theta - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)

    t = ad.Tensor(theta.copy(), requires_grad=True)
    opt = Adam([t], lr=lr)
    opt.step([g])
    assert np.allclose(t.data, want, rtol=0, atol=1e-15)


def test_adam_rejects_non_finite_gradients():
    t = ad.Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([t], lr=1e-3)
    with pytest.raises(NonFiniteError):
        opt.step([np.array([1.0, np.nan, 0.0])])


def test_adam_rejects_bad_lr():
    with pytest.raises(StructuralError):
        Adam([ad.Tensor(np.zeros(2), requires_grad=True)], lr=0.0)


def test_gradients_reach_params_through_jet_paths():
    # Branch parameters touched only through derivative components still get
    # exact gradients (checked against FD in test_losses at system level;
    # here just non-zero flow).
    from geonet.nets import jet_keys, mlp_jet_batch

    net = _net(3, widths=(3, 6, 2))
    pts = np.random.default_rng(0).uniform(0, 1, size=(8, 3))
    jb = mlp_jet_batch(net, pts, jet_keys(2))
    loss = ad.tsum(ad.square(jb.d[(0, 1)]))
    bufs = backprop(loss, [net])
    assert any(np.abs(a).max() > 0 for a in bufs[0].arrays())
