"""Coupled operator evaluation, PDE residuals, and grid inference."""

import numpy as np
import pytest

from geonet import autodiff as ad
from geonet.data import GaussianMixture2D, MeshSpec
from geonet.errors import StructuralError
from geonet.fields import CallableFieldPair, GaussianTranslationField
from geonet.nets import MLPParams, mlp_forward, mlp_jet
from geonet.operator import (
    OperatorParams,
    OperatorFieldPair,
    branch_products,
    eval_C,
    eval_H,
    eval_geodesic_grid,
    residuals_at,
)

from util import rel_err


def _small_op(seed=0, p=5, mesh=None):
    mesh = mesh or MeshSpec(4, 4)
    return OperatorParams.init(
        mesh, p=p, branch_width=10, branch_depth=2, trunk_width=12, trunk_depth=2,
        activation="tanh", seed=seed,
    )


def _signals(seed=42, m=16, scale=0.4):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, scale, m), rng.uniform(0.0, scale, m)


def _zero_net(in_dim, out_dim, bias=None):
    b = np.zeros(out_dim) if bias is None else np.asarray(bias, dtype=np.float64)
    return MLPParams([np.zeros((out_dim, in_dim))], [b], "tanh")


def test_eval_c_zero_trunk_is_constant():
    op = _small_op()
    op = OperatorParams(
        branch0_cty=op.branch0_cty,
        branch1_cty=op.branch1_cty,
        branch0_hj=op.branch0_hj,
        branch1_hj=op.branch1_hj,
        trunk_cty=_zero_net(3, op.p, bias=np.arange(1.0, op.p + 1)),
        trunk_hj=op.trunk_hj,
        p=op.p,
        m=op.m,
        sensor_mesh=op.sensor_mesh,
    )
    mu0, mu1 = _signals()
    jet = eval_C(op, mu0, mu1, (2.0, 2.0), 0.3, order=2)
    b0 = mlp_forward(op.branch0_cty, mu0).data[0]
    b1 = mlp_forward(op.branch1_cty, mu1).data[0]
    want = float((b0 * b1 * np.arange(1.0, op.p + 1)).sum())
    assert np.isclose(jet.value, want, rtol=1e-14)
    assert np.allclose(jet.d1, 0.0) and np.allclose(jet.d2, 0.0)


def test_eval_c_unit_branches_reduce_to_trunk():
    # p = 1 with both branches emitting exactly 1: the operator IS the trunk.
    mesh = MeshSpec(2, 2)
    trunk = MLPParams.init([3, 8, 1], "tanh", np.random.default_rng(3))
    op = OperatorParams(
        branch0_cty=_zero_net(4, 1, bias=[1.0]),
        branch1_cty=_zero_net(4, 1, bias=[1.0]),
        branch0_hj=_zero_net(4, 1, bias=[1.0]),
        branch1_hj=_zero_net(4, 1, bias=[1.0]),
        trunk_cty=trunk,
        trunk_hj=trunk,
        p=1,
        m=4,
        sensor_mesh=mesh,
    )
    x, t = (1.3, 0.8), 0.6
    jet = eval_C(op, np.zeros(4), np.zeros(4), x, t, order=2)
    direct = mlp_jet(trunk, x, t, order=2)[0]
    assert jet.value == direct.value
    assert np.array_equal(jet.d1, direct.d1)
    assert np.array_equal(jet.d2, direct.d2)


def test_eval_c_and_h_match_scripted_reference():
    # Frozen from an independent naive-loop evaluation of the p-term
    # branch/trunk product sum at ((2.5, 2.5), 0.5), seed-0 networks.
    op = _small_op()
    mu0, mu1 = _signals()
    c = eval_C(op, mu0, mu1, (2.5, 2.5), 0.5)
    h = eval_H(op, mu0, mu1, (2.5, 2.5), 0.5)
    assert abs(c.value - 0.10373747729832272) < 1e-14
    assert abs(h.value - (-0.035825415789351722)) < 1e-14


def test_branch_trunk_separation_is_exact():
    # For fixed inputs the operator is exactly the p-term combination of
    # trunk outputs weighted by the branch products.
    op = _small_op(seed=5)
    mu0, mu1 = _signals(7)
    bp_cty, _ = branch_products(op, mu0, mu1)
    pts = np.array([[1.0, 2.0, 0.25], [4.0, 0.5, 0.75]])
    trunk_vals = mlp_forward(op.trunk_cty, pts).data
    explicit = (trunk_vals * bp_cty.data[0][None, :]).sum(axis=1)
    for row, pt in enumerate(pts):
        jet = eval_C(op, mu0, mu1, pt[:2], pt[2])
        assert np.isclose(jet.value, explicit[row], rtol=1e-14, atol=1e-16)


def test_sample_length_validation():
    op = _small_op()
    with pytest.raises(StructuralError):
        eval_C(op, np.zeros(9), np.zeros(16), (1.0, 1.0), 0.5)


def test_outside_domain_warns():
    op = _small_op()
    mu0, mu1 = _signals()
    with pytest.warns(UserWarning):
        eval_C(op, mu0, mu1, (9.0, 1.0), 0.5)


def test_residuals_constant_density_zero_potential():
    def jets(x, t, order):
        keys = [(), (0,), (1,), (2,), (0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        mu = {k: 0.0 for k in keys}
        mu[()] = 3.7
        u = {k: 0.0 for k in keys}
        return mu, u

    res = residuals_at(CallableFieldPair(jets), (1.0, 1.0), 0.5)
    assert res.cty == 0.0 and res.hj == 0.0


def test_translation_field_annihilates_residuals():
    mix = GaussianMixture2D(
        [0.5, 0.5],
        [[2.0, 2.0], [3.0, 3.0]],
        [np.diag([0.5, 0.8]), [[0.7, 0.2], [0.2, 0.6]]],
    )
    field = GaussianTranslationField(mix, [0.9, -0.4])
    rng = np.random.default_rng(12)
    for _ in range(100):
        x = rng.uniform(0, 5, 2)
        t = rng.uniform(0, 1)
        res = residuals_at(field, x, t, ge=True)
        assert abs(res.cty) < 1e-10 and abs(res.hj) < 1e-10
        assert all(abs(v) < 1e-8 for v in res.ge_cty + res.ge_hj)


def test_residuals_match_fd_reconstruction():
    # Rebuild both PDE expressions from FD derivatives of the operator's
    # plain values and compare against the jet-based residuals.
    op = _small_op(seed=0)
    mu0, mu1 = _signals()
    fields = OperatorFieldPair(op, mu0, mu1)

    def c_val(p):
        return eval_C(op, mu0, mu1, p[:2], p[2], order=1).value

    def h_val(p):
        return eval_H(op, mu0, mu1, p[:2], p[2], order=1).value

    def fd1(fn, p, i, h=1e-4):
        e = np.zeros(3)
        e[i] = h
        return (-fn(p + 2 * e) + 8 * fn(p + e) - 8 * fn(p - e) + fn(p - 2 * e)) / (12 * h)

    def fd2(fn, p, i, h=1e-4):
        e = np.zeros(3)
        e[i] = h
        return (fn(p + e) - 2 * fn(p) + fn(p - e)) / (h * h)

    rng = np.random.default_rng(3)
    for _ in range(10):
        p = np.array([rng.uniform(0.5, 4.5), rng.uniform(0.5, 4.5), rng.uniform(0.1, 0.9)])
        res = residuals_at(fields, p[:2], p[2])
        cty_fd = fd1(c_val, p, 2) + sum(
            fd1(c_val, p, j) * fd1(h_val, p, j) + c_val(p) * fd2(h_val, p, j) for j in (0, 1)
        )
        hj_fd = fd1(h_val, p, 2) + 0.5 * sum(fd1(h_val, p, j) ** 2 for j in (0, 1))
        assert rel_err(res.cty, cty_fd, floor=1e-4) < 1e-5
        assert rel_err(res.hj, hj_fd, floor=1e-4) < 1e-5


def test_product_rule_expansion_equivalence():
    # div(C grad H) assembled from operator jets vs the same quantity built
    # term-by-term from explicit per-network trunk derivative contractions.
    op = _small_op(seed=9)
    mu0, mu1 = _signals(11)
    bp_cty, bp_hj = branch_products(op, mu0, mu1)
    w_cty, w_hj = bp_cty.data[0], bp_hj.data[0]
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.uniform(0.5, 4.5, 2)
        t = rng.uniform(0.1, 0.9)
        c = eval_C(op, mu0, mu1, x, t, order=2)
        h = eval_H(op, mu0, mu1, x, t, order=2)
        via_jets = sum(
            c.partial((j,)) * h.partial((j,)) + c.value * h.partial((j, j)) for j in (0, 1)
        )
        tj_cty = mlp_jet(op.trunk_cty, x, t, order=2)
        tj_hj = mlp_jet(op.trunk_hj, x, t, order=2)
        explicit = 0.0
        for j in (0, 1):
            dc = sum(w_cty[k] * tj_cty[k].partial((j,)) for k in range(op.p))
            dh = sum(w_hj[k] * tj_hj[k].partial((j,)) for k in range(op.p))
            cv = sum(w_cty[k] * tj_cty[k].value for k in range(op.p))
            d2h = sum(w_hj[k] * tj_hj[k].partial((j, j)) for k in range(op.p))
            explicit += dc * dh + cv * d2h
        assert rel_err(via_jets, explicit, floor=1e-10) < 1e-12


def test_entropic_terms_change_residuals_consistently():
    op = _small_op(seed=1)
    mu0, mu1 = _signals(5)
    fields = OperatorFieldPair(op, mu0, mu1)
    x, t = (2.2, 1.7), 0.4
    base = residuals_at(fields, x, t, epsilon=0.0)
    reg = residuals_at(fields, x, t, epsilon=0.01)
    c = eval_C(op, mu0, mu1, x, t, order=2)
    h = eval_H(op, mu0, mu1, x, t, order=2)
    lap_c = c.partial((0, 0)) + c.partial((1, 1))
    lap_h = h.partial((0, 0)) + h.partial((1, 1))
    assert np.isclose(reg.cty - base.cty, 0.01 * lap_c, rtol=1e-12)
    assert np.isclose(reg.hj - base.hj, -0.01 * lap_h, rtol=1e-12)


def test_ge_residuals_match_fd_of_residuals():
    op = _small_op(seed=2)
    mu0, mu1 = _signals(6)
    fields = OperatorFieldPair(op, mu0, mu1)
    rng = np.random.default_rng(8)
    for _ in range(3):
        p = np.array([rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0.2, 0.8)])
        res = residuals_at(fields, p[:2], p[2], ge=True)
        for axis in (0, 1):
            e = np.zeros(3)
            e[axis] = 1e-4

            def cty_at(q):
                return residuals_at(fields, q[:2], q[2]).cty

            def hj_at(q):
                return residuals_at(fields, q[:2], q[2]).hj

            fd_c = (-cty_at(p + 2 * e) + 8 * cty_at(p + e) - 8 * cty_at(p - e) + cty_at(p - 2 * e)) / (12e-4)
            fd_h = (-hj_at(p + 2 * e) + 8 * hj_at(p + e) - 8 * hj_at(p - e) + hj_at(p - 2 * e)) / (12e-4)
            assert rel_err(res.ge_cty[axis], fd_c, floor=1e-5) < 1e-5
            assert rel_err(res.ge_hj[axis], fd_h, floor=1e-5) < 1e-5


def test_grid_eval_any_resolution_no_resampling():
    op = _small_op()
    mu0, mu1 = _signals()
    mesh = MeshSpec(50, 50)
    raw, clamped = eval_geodesic_grid(op, mu0, mu1, mesh, 0.5)
    assert raw.values.size == 2500
    assert clamped.values.min() >= 0.0
    keep = raw.values > 0
    assert np.array_equal(clamped.values[keep], raw.values[keep])


def test_grid_eval_constant_trunk_constant_grid():
    op = _small_op()
    op = OperatorParams(
        branch0_cty=op.branch0_cty,
        branch1_cty=op.branch1_cty,
        branch0_hj=op.branch0_hj,
        branch1_hj=op.branch1_hj,
        trunk_cty=_zero_net(3, op.p, bias=np.full(op.p, 0.5)),
        trunk_hj=op.trunk_hj,
        p=op.p,
        m=op.m,
        sensor_mesh=op.sensor_mesh,
    )
    mu0, mu1 = _signals()
    raw, _ = eval_geodesic_grid(op, mu0, mu1, MeshSpec(7, 9), 0.3)
    assert np.allclose(raw.values, raw.values[0])


def test_grid_eval_subsample_consistency():
    # A 3x coarser mesh's centers are a subset of the fine mesh's centers;
    # direct evaluation there must agree with subsampling the fine grid.
    op = _small_op(seed=6)
    mu0, mu1 = _signals(13)
    fine, _ = eval_geodesic_grid(op, mu0, mu1, MeshSpec(9, 9), 0.5)
    coarse, _ = eval_geodesic_grid(op, mu0, mu1, MeshSpec(3, 3), 0.5)
    sub = fine.values2d()[1::3, 1::3]
    assert np.allclose(sub, coarse.values2d(), rtol=1e-13, atol=1e-16)
