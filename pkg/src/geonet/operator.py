"""The coupled density/potential operator built from six networks.

Two branch networks encode the endpoint densities sampled at fixed sensors,
one trunk network encodes the space-time query; their p-term product sum
gives the density-side operator.  A second triple gives the potential-side
operator.  Branch outputs carry no space-time dependence, so every spatial or
temporal partial of the operator is the branch product contracted with the
corresponding trunk partial.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DensityGrid, MeshSpec
from .errors import StructuralError, UnsupportedOrderError
from .nets import (
    FIRST_KEYS,
    SECOND_KEYS,
    THIRD_KEYS,
    Jet,
    MLPParams,
    jet_keys,
    mlp_forward,
    mlp_jet_batch,
)

SPATIAL_AXES = (0, 1)
TIME_AXIS = 2


@dataclass
class OperatorParams:
    """Six-network parameter bundle plus sensor geometry."""

    branch0_cty: MLPParams
    branch1_cty: MLPParams
    branch0_hj: MLPParams
    branch1_hj: MLPParams
    trunk_cty: MLPParams
    trunk_hj: MLPParams
    p: int
    m: int
    sensor_mesh: MeshSpec

    def __post_init__(self):
        nets = self.networks()
        for name, net in nets.items():
            if net.out_dim != self.p:
                raise StructuralError(f"{name} emits {net.out_dim} values, expected p={self.p}")
        for name in ("branch0_cty", "branch1_cty", "branch0_hj", "branch1_hj"):
            if nets[name].in_dim != self.m:
                raise StructuralError(f"{name} accepts {nets[name].in_dim} inputs, expected m={self.m}")
        for name in ("trunk_cty", "trunk_hj"):
            if nets[name].in_dim != 3:
                raise StructuralError(f"{name} must accept (x1, x2, t)")
        if self.sensor_mesh.n_points != self.m:
            raise StructuralError(
                f"sensor mesh has {self.sensor_mesh.n_points} nodes, expected m={self.m}"
            )

    def networks(self) -> dict:
        return {
            "branch0_cty": self.branch0_cty,
            "branch1_cty": self.branch1_cty,
            "branch0_hj": self.branch0_hj,
            "branch1_hj": self.branch1_hj,
            "trunk_cty": self.trunk_cty,
            "trunk_hj": self.trunk_hj,
        }

    def network_list(self) -> list[MLPParams]:
        return list(self.networks().values())

    def parameters(self) -> list[Tensor]:
        out = []
        for net in self.network_list():
            out.extend(net.parameters())
        return out

    @property
    def sensors(self) -> np.ndarray:
        """Fixed sensor locations, row-major over the sensor mesh (x fastest)."""
        return self.sensor_mesh.points()

    @property
    def domain(self) -> tuple[float, float, float, float]:
        return self.sensor_mesh.bounds()

    @classmethod
    def init(
        cls,
        sensor_mesh: MeshSpec,
        p: int,
        branch_width: int,
        branch_depth: int,
        trunk_width: int,
        trunk_depth: int,
        activation: str,
        seed: int = 0,
    ) -> "OperatorParams":
        """Glorot-initialized bundle; depth counts hidden layers."""
        rng = np.random.default_rng(seed)
        m = sensor_mesh.n_points
        branch_widths = [m] + [branch_width] * branch_depth + [p]
        trunk_widths = [3] + [trunk_width] * trunk_depth + [p]
        return cls(
            branch0_cty=MLPParams.init(branch_widths, activation, rng),
            branch1_cty=MLPParams.init(branch_widths, activation, rng),
            branch0_hj=MLPParams.init(branch_widths, activation, rng),
            branch1_hj=MLPParams.init(branch_widths, activation, rng),
            trunk_cty=MLPParams.init(trunk_widths, activation, rng),
            trunk_hj=MLPParams.init(trunk_widths, activation, rng),
            p=p,
            m=m,
            sensor_mesh=sensor_mesh,
        )


def _check_samples(params: OperatorParams, samples: np.ndarray, what: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if arr.shape[1] != params.m:
        raise StructuralError(f"{what} has length {arr.shape[1]}, expected m={params.m}")
    return arr


def branch_products(params: OperatorParams, mu0_samples, mu1_samples) -> tuple[Tensor, Tensor]:
    """Elementwise products B0(mu0) * B1(mu1), shape (pairs, p), per equation side."""
    mu0 = _check_samples(params, mu0_samples, "mu0 samples")
    mu1 = _check_samples(params, mu1_samples, "mu1 samples")
    if mu0.shape[0] != mu1.shape[0]:
        raise StructuralError("mu0/mu1 sample sets disagree on pair count")
    bp_cty = ad.mul(mlp_forward(params.branch0_cty, mu0), mlp_forward(params.branch1_cty, mu1))
    bp_hj = ad.mul(mlp_forward(params.branch0_hj, mu0), mlp_forward(params.branch1_hj, mu1))
    return bp_cty, bp_hj


class ScalarJets:
    """Scalar field value/partials per batch row, keyed like net jets.

    The value sits under key (); every entry is a Tensor of shape (batch,).
    Indexing with a missing key means that partial was not requested.
    """

    def __init__(self, comps: dict):
        self.comps = comps

    def __getitem__(self, key):
        try:
            return self.comps[key]
        except KeyError:
            raise UnsupportedOrderError(f"partial {key} was not evaluated") from None

    def __contains__(self, key):
        return key in self.comps

    def data(self, key) -> np.ndarray:
        return self[key].data


def contract_trunk_jets(trunk_jb, weights_rows: Tensor) -> ScalarJets:
    """Weight trunk jet components by per-row branch products and sum over p."""
    comps = {(): ad.tsum(ad.mul(weights_rows, trunk_jb.val), axis=1)}
    for key, tensor in trunk_jb.d.items():
        comps[key] = ad.tsum(ad.mul(weights_rows, tensor), axis=1)
    return ScalarJets(comps)


def operator_scalar_jets(
    trunk: MLPParams, bp: Tensor, points: np.ndarray, pair_idx: np.ndarray, keys
) -> ScalarJets:
    """Batched operator field jets at (points, pair_idx) for one equation side."""
    jb = mlp_jet_batch(trunk, points, keys)
    w = ad.take_rows(bp, np.asarray(pair_idx, dtype=np.intp))
    return contract_trunk_jets(jb, w)


def _warn_outside(params: OperatorParams, x) -> None:
    x_min, x_max, y_min, y_max = params.domain
    if not (x_min <= x[0] <= x_max and y_min <= x[1] <= y_max):
        warnings.warn(
            f"evaluation point {tuple(x)} lies outside the domain "
            f"[{x_min},{x_max}]x[{y_min},{y_max}]",
            stacklevel=3,
        )


def _eval_side(params, trunk, branch0, branch1, mu0_samples, mu1_samples, x, t, order) -> Jet:
    _warn_outside(params, x)
    mu0 = _check_samples(params, mu0_samples, "mu0 samples")
    mu1 = _check_samples(params, mu1_samples, "mu1 samples")
    keys = jet_keys(order)
    pt = np.array([[x[0], x[1], t]], dtype=np.float64)
    with ad.no_grad():
        bp = ad.mul(mlp_forward(branch0, mu0), mlp_forward(branch1, mu1))
        jets = operator_scalar_jets(trunk, bp, pt, np.zeros(1, dtype=np.intp), keys)
    d1 = np.array([jets.data(k)[0] for k in FIRST_KEYS])
    d2 = np.array([jets.data(k)[0] for k in SECOND_KEYS]) if order >= 2 else None
    d3 = np.array([jets.data(k)[0] for k in THIRD_KEYS]) if order >= 3 else None
    return Jet(value=float(jets.data(())[0]), d1=d1, d2=d2, d3=d3)


def eval_C(params: OperatorParams, mu0_samples, mu1_samples, x, t, order: int = 2) -> Jet:
    """Density-side operator value and partials at one point."""
    return _eval_side(
        params, params.trunk_cty, params.branch0_cty, params.branch1_cty,
        mu0_samples, mu1_samples, x, t, order,
    )


def eval_H(params: OperatorParams, mu0_samples, mu1_samples, x, t, order: int = 2) -> Jet:
    """Potential-side operator value and partials at one point."""
    return _eval_side(
        params, params.trunk_hj, params.branch0_hj, params.branch1_hj,
        mu0_samples, mu1_samples, x, t, order,
    )


# ---------------------------------------------------------------------------
# PDE residual formulas.  They are written in plain arithmetic so the same
# code serves float jets (analytic fields, tests) and batched Tensors
# (training).  `mu` and `u` map component keys to values; () is the value.


def residual_cty(mu, u, epsilon: float = 0.0):
    """Mass-transport residual: d_t mu + div(mu grad u) [+ eps * lap mu]."""
    r = mu[(TIME_AXIS,)]
    for j in SPATIAL_AXES:
        r = r + mu[(j,)] * u[(j,)] + mu[()] * u[(j, j)]
    if epsilon > 0.0:
        r = r + epsilon * (mu[(0, 0)] + mu[(1, 1)])
    return r


def residual_hj(u, epsilon: float = 0.0):
    """Dual residual: d_t u + 1/2 |grad u|^2 [- eps * lap u]."""
    r = u[(TIME_AXIS,)]
    for j in SPATIAL_AXES:
        r = r + 0.5 * (u[(j,)] * u[(j,)])
    if epsilon > 0.0:
        r = r - epsilon * (u[(0, 0)] + u[(1, 1)])
    return r


def _key(*idx):
    return tuple(sorted(idx))


def residual_ge_cty(mu, u, axis: int, epsilon: float = 0.0):
    """d/dx_axis of the mass-transport residual."""
    r = mu[_key(axis, TIME_AXIS)]
    for j in SPATIAL_AXES:
        r = (
            r
            + mu[_key(axis, j)] * u[(j,)]
            + mu[(j,)] * u[_key(axis, j)]
            + mu[(axis,)] * u[(j, j)]
            + mu[()] * u[_key(axis, j, j)]
        )
    if epsilon > 0.0:
        r = r + epsilon * (mu[_key(axis, 0, 0)] + mu[_key(axis, 1, 1)])
    return r


def residual_ge_hj(u, axis: int, epsilon: float = 0.0):
    """d/dx_axis of the dual residual."""
    r = u[_key(axis, TIME_AXIS)]
    for j in SPATIAL_AXES:
        r = r + u[(j,)] * u[_key(axis, j)]
    if epsilon > 0.0:
        r = r - epsilon * (u[_key(axis, 0, 0)] + u[_key(axis, 1, 1)])
    return r


@dataclass
class Residuals:
    """Pointwise PDE residuals; the ge blocks exist only when requested."""

    cty: float
    hj: float
    ge_cty: tuple | None = None
    ge_hj: tuple | None = None


def required_order(ge: bool) -> int:
    return 3 if ge else 2


def residuals_at(fields, x, t, epsilon: float = 0.0, ge: bool = False) -> Residuals:
    """Evaluate the optimality-system residuals of a field pair at one point.

    ``fields`` must provide jets(x, t, order) returning two key->float
    mappings (density field, potential field) covering the requested order.
    """
    mu, u = fields.jets(x, t, required_order(ge))
    res = Residuals(
        cty=float(residual_cty(mu, u, epsilon)),
        hj=float(residual_hj(u, epsilon)),
    )
    if ge:
        res.ge_cty = tuple(float(residual_ge_cty(mu, u, ax, epsilon)) for ax in SPATIAL_AXES)
        res.ge_hj = tuple(float(residual_ge_hj(u, ax, epsilon)) for ax in SPATIAL_AXES)
    return res


class OperatorFieldPair:
    """FieldPair view of a trained operator for one input pair."""

    def __init__(self, params: OperatorParams, mu0_samples, mu1_samples):
        self.params = params
        self.mu0 = np.asarray(mu0_samples, dtype=np.float64).ravel()
        self.mu1 = np.asarray(mu1_samples, dtype=np.float64).ravel()

    def jets(self, x, t, order: int):
        c = eval_C(self.params, self.mu0, self.mu1, x, t, order)
        h = eval_H(self.params, self.mu0, self.mu1, x, t, order)
        return c.as_dict(), h.as_dict()

    def value_grid(self, mesh: MeshSpec, t: float):
        return eval_geodesic_grid(self.params, self.mu0, self.mu1, mesh, t)


def eval_geodesic_grid(
    params: OperatorParams, mu0_samples, mu1_samples, mesh: MeshSpec, t: float
) -> tuple[DensityGrid, DensityGrid]:
    """Density-side operator on every mesh node at time t.

    The mesh resolution is independent of the sensor mesh; the branch inputs
    are never resampled.  Returns the raw grid (negatives retained) and a
    clamped copy for rendering.
    """
    mu0 = _check_samples(params, mu0_samples, "mu0 samples")
    mu1 = _check_samples(params, mu1_samples, "mu1 samples")
    pts = mesh.points()
    xt = np.column_stack([pts, np.full(len(pts), float(t))])
    with ad.no_grad():
        bp = ad.mul(
            mlp_forward(params.branch0_cty, mu0), mlp_forward(params.branch1_cty, mu1)
        )
        trunk = mlp_forward(params.trunk_cty, xt)
        values = trunk.data @ bp.data[0]
    raw = DensityGrid(mesh, values, convention="density")
    return raw, raw.clamped()
