"""MLP forward pass and the exact-jet engine against FD oracles."""

import numpy as np
import pytest

from geonet import autodiff as ad
from geonet.errors import StructuralError, UnsupportedOrderError
from geonet.nets import (
    FIRST_KEYS,
    SECOND_KEYS,
    THIRD_KEYS,
    MLPParams,
    jet_keys,
    mlp_forward,
    mlp_jet,
    mlp_jet_batch,
)

from util import rel_err


def test_forward_zero_params_zero_output():
    net = MLPParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)], "tanh")
    out = mlp_forward(net, np.array([1.0, -2.0, 0.5]))
    assert np.array_equal(out.data, np.zeros((1, 2)))


def test_forward_single_identity_layer_echoes_input():
    # One layer means no hidden activation at all: output = Wx + b = x.
    net = MLPParams([np.eye(3)], [np.zeros(3)], "tanh")
    x = np.array([0.3, -1.2, 2.0])
    out = mlp_forward(net, x)
    assert np.array_equal(out.data[0], x)


def test_forward_seed0_matches_scripted_reference():
    # Frozen from an independent scripted forward pass (naive loops) over the
    # same seed-0 Glorot weights.
    net = MLPParams.init([3, 8, 2], "tanh", np.random.default_rng(0))
    out = mlp_forward(net, np.array([0.5, 0.5, 0.5]))
    assert abs(out.data[0, 0] - 0.14727409860278123) < 1e-15
    assert abs(out.data[0, 1] - (-0.059347819121675756)) < 1e-15


def test_forward_dimension_mismatch():
    net = MLPParams.init([3, 4, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(StructuralError):
        mlp_forward(net, np.zeros(5))


def test_params_validation():
    with pytest.raises(StructuralError):
        MLPParams([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)], "tanh")
    with pytest.raises(StructuralError):
        MLPParams([np.full((2, 2), np.nan)], [np.zeros(2)], "tanh")
    with pytest.raises(StructuralError):
        MLPParams.init([3, 4], "sigmoid", np.random.default_rng(0))


def test_glorot_bounds_and_determinism():
    net = MLPParams.init([100, 50], "tanh", np.random.default_rng(9))
    bound = np.sqrt(6.0 / 150.0)
    assert np.abs(net.weights[0].data).max() <= bound
    assert np.array_equal(
        net.weights[0].data,
        MLPParams.init([100, 50], "tanh", np.random.default_rng(9)).weights[0].data,
    )
    assert np.array_equal(net.biases[0].data, np.zeros(50))


def test_jet_affine_net():
    w = np.array([[1.0, 2.0, -0.5], [0.0, 1.0, 3.0]])
    net = MLPParams([w], [np.array([0.7, -0.2])], "tanh")
    jets = mlp_jet(net, (0.3, 0.4), 0.5, order=3)
    for c, jet in enumerate(jets):
        assert np.allclose(jet.d1, w[c])
        assert np.allclose(jet.d2, 0.0)
        assert np.allclose(jet.d3, 0.0)


def test_jet_constant_net():
    net = MLPParams(
        [np.zeros((4, 3)), np.zeros((2, 4))],
        [np.array([1.0, -1.0, 0.5, 0.0]), np.array([2.5, -0.5])],
        "tanh",
    )
    jets = mlp_jet(net, (1.0, 2.0), 0.3, order=2)
    assert jets[0].value == 2.5 and jets[1].value == -0.5
    for jet in jets:
        assert np.allclose(jet.d1, 0.0) and np.allclose(jet.d2, 0.0)


def _jet_fn(net, order, key):
    """Map point -> the engine's partial `key` of output 0 (value for ())."""

    def fn(p):
        jet = mlp_jet(net, (p[0], p[1]), p[2], order=order)[0]
        return jet.value if key == () else jet.partial(key)

    return fn


@pytest.mark.parametrize("kind,tol", [("tanh", 1e-5), ("gelu", 1e-4)])
def test_jets_match_central_differences(kind, tol):
    # d1 vs FD of values, d2 vs FD of d1, d3 vs FD of d2 (step 1e-4).
    rng = np.random.default_rng(17)
    net = MLPParams.init([3, 10, 10, 2], kind, rng)
    for point in rng.uniform(0.2, 4.0, size=(3, 3)):
        point[2] = rng.uniform(0.1, 0.9)
        jet = mlp_jet(net, point[:2], point[2], order=3)[0]
        for i, key in enumerate(FIRST_KEYS):
            fd = np.float64(
                _fd(_jet_fn(net, 1, ()), point, key[0])
            )
            assert rel_err(jet.d1[i], fd) < tol
        for i, key in enumerate(SECOND_KEYS):
            fd = _fd(_jet_fn(net, 1, (key[1],)), point, key[0])
            assert rel_err(jet.d2[i], fd) < tol
        for i, key in enumerate(THIRD_KEYS):
            fd = _fd(_jet_fn(net, 2, tuple(key[1:])), point, key[0])
            assert rel_err(jet.d3[i], fd) < tol


def _fd(fn, x, i, h=1e-4):
    e = np.zeros(3)
    e[i] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def test_mixed_partials_stored_once():
    # (0,2) and (2,0) resolve to the same stored component by construction.
    net = MLPParams.init([3, 6, 1], "tanh", np.random.default_rng(2))
    jet = mlp_jet(net, (1.0, 2.0), 0.4, order=2)[0]
    assert jet.partial((0, 2)) == jet.partial((2, 0))
    assert jet.partial((1, 0)) == jet.partial((0, 1))


def test_jet_order_validation():
    net = MLPParams.init([3, 4, 1], "tanh", np.random.default_rng(0))
    with pytest.raises(UnsupportedOrderError):
        mlp_jet(net, (0.0, 0.0), 0.0, order=4)
    jet = mlp_jet(net, (0.0, 0.0), 0.0, order=1)[0]
    with pytest.raises(UnsupportedOrderError):
        jet.partial((0, 0))


def test_restricted_second_order_keys_match_full():
    net = MLPParams.init([3, 8, 2], "tanh", np.random.default_rng(4))
    pts = np.array([[1.0, 2.0, 0.3], [0.5, 0.1, 0.9]])
    full = mlp_jet_batch(net, pts, jet_keys(2))
    slim = mlp_jet_batch(net, pts, jet_keys(2, pure_second_spatial=True))
    assert np.array_equal(full.val.data, slim.val.data)
    for key in jet_keys(2, pure_second_spatial=True):
        assert np.array_equal(full.d[key].data, slim.d[key].data)


def test_forward_deterministic_bitwise():
    net = MLPParams.init([3, 32, 32, 4], "gelu", np.random.default_rng(5))
    x = np.random.default_rng(6).uniform(0, 5, size=(64, 3))
    a = mlp_forward(net, x).data
    b = mlp_forward(net, x).data
    assert np.array_equal(a, b)


def test_batched_jets_equal_pointwise_jets():
    # Batched and single-point paths run the same formulas; BLAS may reorder
    # GEMM accumulation across batch shapes, so equality is near-ulp rather
    # than bitwise.
    net = MLPParams.init([3, 7, 3], "gelu", np.random.default_rng(8))
    pts = np.random.default_rng(9).uniform(0.0, 5.0, size=(5, 3))
    with ad.no_grad():
        jb = mlp_jet_batch(net, pts, jet_keys(2))
    for row in range(5):
        jets = mlp_jet(net, pts[row, :2], pts[row, 2], order=2)
        for c, jet in enumerate(jets):
            assert np.isclose(jet.value, jb.val.data[row, c], rtol=1e-13, atol=1e-15)
            for i, key in enumerate(FIRST_KEYS):
                assert np.isclose(jet.d1[i], jb.d[key].data[row, c], rtol=1e-13, atol=1e-15)
            for i, key in enumerate(SECOND_KEYS):
                assert np.isclose(jet.d2[i], jb.d[key].data[row, c], rtol=1e-13, atol=1e-15)
