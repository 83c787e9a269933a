"""Empirical loss assembly for the coupled operator training.

The discrete norm is a plain sum of squares over sampled points (no cell
area), and every component carries a weight / N prefactor with N the number
of points in the batch at hand.  That makes the full-batch loss the
size-weighted mean of mini-batch losses, which the trainer relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import StructuralError
from .nets import jet_keys
from .operator import (
    OperatorParams,
    branch_products,
    operator_scalar_jets,
    residual_cty,
    residual_ge_cty,
    residual_ge_hj,
    residual_hj,
)

SPATIAL_AXES = (0, 1)


@dataclass
class LossWeights:
    """Scaling weights for the physics, boundary and enhancement terms."""

    alpha1: float = 30.0
    alpha2: float = 30.0
    beta0: float = 1.0
    beta1: float = 1.0
    gamma: tuple = (0.0, 0.0)
    omega: tuple = (0.0, 0.0)
    epsilon: float = 0.0

    def __post_init__(self):
        self.gamma = tuple(float(g) for g in self.gamma)
        self.omega = tuple(float(w) for w in self.omega)
        vals = (self.alpha1, self.alpha2, self.beta0, self.beta1, self.epsilon) + self.gamma + self.omega
        if len(self.gamma) != 2 or len(self.omega) != 2:
            raise StructuralError("gamma and omega need one weight per spatial axis")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise StructuralError("loss weights must be finite and nonnegative")

    @property
    def ge_enabled(self) -> bool:
        return any(g > 0 for g in self.gamma) or any(w > 0 for w in self.omega)


@dataclass
class LossReport:
    """Loss component values plus a per-pair breakdown of the same sums."""

    l_cty: float
    l_hj: float
    l_bc: float
    l_ge: float
    per_pair: list = field(default_factory=list)

    @property
    def l_total(self) -> float:
        return self.l_cty + self.l_hj + self.l_bc + self.l_ge


def _mean_square(residual: Tensor, weight: float, n: int) -> Tensor:
    return ad.scale(ad.tsum(ad.square(residual)), weight / n)


def _pair_sums(pair_idx: np.ndarray, values: np.ndarray, n_pairs: int) -> np.ndarray:
    return np.bincount(pair_idx, weights=values, minlength=n_pairs)


def _trunk_keys(weights: LossWeights, side: str):
    """Cheapest closed jet component set for one equation side."""
    if weights.ge_enabled:
        return jet_keys(3)
    if side == "cty":
        # The density side needs first partials; its own Laplacian enters
        # only through the diffusive term.
        if weights.epsilon > 0:
            return jet_keys(2, pure_second_spatial=True)
        return jet_keys(1)
    return jet_keys(2, pure_second_spatial=True)


def interior_terms(params: OperatorParams, bp_cty, bp_hj, batch, weights: LossWeights):
    """Interior residual tensors and loss components for one batch.

    Returns (l_cty, l_hj, l_ge, phi, psi, ge_per_pair) with the losses as
    tape scalars and ge_per_pair the enhancement contribution per pair.
    """
    n = len(batch.pair_idx)
    if n == 0:
        raise StructuralError("empty collocation batch")
    idx = np.asarray(batch.pair_idx, dtype=np.intp)
    mu = operator_scalar_jets(
        params.trunk_cty, bp_cty, batch.points, idx, _trunk_keys(weights, "cty")
    )
    u = operator_scalar_jets(
        params.trunk_hj, bp_hj, batch.points, idx, _trunk_keys(weights, "hj")
    )
    phi = residual_cty(mu, u, weights.epsilon)
    psi = residual_hj(u, weights.epsilon)
    l_cty = _mean_square(phi, weights.alpha1, n)
    l_hj = _mean_square(psi, weights.alpha2, n)
    l_ge = None
    ge_per_pair = np.zeros(batch.n_pairs)
    if weights.ge_enabled:
        for ax in SPATIAL_AXES:
            for weight, residual_fn in (
                (weights.gamma[ax], lambda: residual_ge_cty(mu, u, ax, weights.epsilon)),
                (weights.omega[ax], lambda: residual_ge_hj(u, ax, weights.epsilon)),
            ):
                if weight <= 0:
                    continue
                r = residual_fn()
                term = _mean_square(r, weight, n)
                l_ge = term if l_ge is None else ad.add(l_ge, term)
                ge_per_pair += weight / n * _pair_sums(idx, r.data**2, batch.n_pairs)
    if l_ge is None:
        l_ge = ad.constant(0.0)
    return l_cty, l_hj, l_ge, phi, psi, ge_per_pair


def boundary_terms(params: OperatorParams, bp_cty, batch, weights: LossWeights):
    """Boundary residual tensors/losses at t=0 and t=1.

    The boundary reuses the interior points' spatial coordinates; the target
    values are the pair densities sampled at those locations.
    """
    n = len(batch.pair_idx)
    if n == 0:
        raise StructuralError("empty collocation batch")
    if len(batch.mu0_at_x) != n or len(batch.mu1_at_x) != n:
        raise StructuralError("boundary sample vectors do not match the batch")
    idx = np.asarray(batch.pair_idx, dtype=np.intp)
    xy = batch.points[:, :2]
    # Both time slices in one stacked pass: rows [0:n] at t=0, [n:2n] at t=1.
    pts = np.concatenate(
        [np.column_stack([xy, np.zeros(n)]), np.column_stack([xy, np.ones(n)])]
    )
    targets = np.concatenate([batch.mu0_at_x, batch.mu1_at_x]).astype(np.float64)
    jets = operator_scalar_jets(params.trunk_cty, bp_cty, pts, np.concatenate([idx, idx]), ())
    both = ad.add(jets[()], ad.constant(-targets))
    b0 = ad.slice_rows(both, 0, n)
    b1 = ad.slice_rows(both, n, 2 * n)
    l_bc = ad.add(_mean_square(b0, weights.beta0, n), _mean_square(b1, weights.beta1, n))
    return l_bc, b0, b1


def total_loss(params: OperatorParams, batch, weights: LossWeights):
    """Full loss over a batch: (tape scalar, LossReport)."""
    bp_cty, bp_hj = branch_products(params, batch.mu0_sensors, batch.mu1_sensors)
    l_cty, l_hj, l_ge, phi, psi, ge_by_pair = interior_terms(params, bp_cty, bp_hj, batch, weights)
    l_bc, b0, b1 = boundary_terms(params, bp_cty, batch, weights)
    total = ad.add(ad.add(l_cty, l_hj), ad.add(l_bc, l_ge))

    n = len(batch.pair_idx)
    n_pairs = batch.n_pairs
    idx = np.asarray(batch.pair_idx, dtype=np.intp)
    cty_by_pair = weights.alpha1 / n * _pair_sums(idx, phi.data**2, n_pairs)
    hj_by_pair = weights.alpha2 / n * _pair_sums(idx, psi.data**2, n_pairs)
    bc_by_pair = (
        weights.beta0 / n * _pair_sums(idx, b0.data**2, n_pairs)
        + weights.beta1 / n * _pair_sums(idx, b1.data**2, n_pairs)
    )
    report = LossReport(
        l_cty=float(l_cty.data),
        l_hj=float(l_hj.data),
        l_bc=float(l_bc.data),
        l_ge=float(l_ge.data),
        per_pair=[
            (i, (float(cty_by_pair[i]), float(hj_by_pair[i]), float(bc_by_pair[i]), float(ge_by_pair[i])))
            for i in range(n_pairs)
        ],
    )
    return total, report
