"""Fully-connected networks and exact input-derivative jets.

Input partials are obtained by forward jet propagation: each layer maps the
bundle (value, first/second/third partials w.r.t. the network inputs) to the
next layer's bundle.  Linear layers act componentwise on the bundle; hidden
activations compose via the usual chain-rule expansions.  All bundle
components live on the autodiff tape, so a scalar loss built from them can be
reverse-differentiated w.r.t. every network parameter afterwards
(forward-over-reverse).

Component keys are sorted index tuples over (0, 1, 2) = (x1, x2, t); the
value carries the empty tuple.  Mixed partials are stored once, which makes
their symmetry structural rather than numerical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import StructuralError, UnsupportedOrderError

ACTIVATIONS = ("tanh", "gelu")

# Component key groups for jets over (x1, x2, t).
FIRST_KEYS = ((0,), (1,), (2,))
SECOND_KEYS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
# Third order restricted to d/dx_l of every second-order key, l in {0, 1}:
# every order-3 multi-index except (t, t, t).
THIRD_KEYS = (
    (0, 0, 0),
    (0, 0, 1),
    (0, 0, 2),
    (0, 1, 1),
    (0, 1, 2),
    (0, 2, 2),
    (1, 1, 1),
    (1, 1, 2),
    (1, 2, 2),
)


def jet_keys(order: int, *, pure_second_spatial=False) -> tuple[tuple[int, ...], ...]:
    """Derivative keys for a jet of the given order (value key () excluded).

    ``pure_second_spatial`` trims order 2 down to first partials plus the two
    pure spatial second partials; that is the cheapest closed component set
    that still supports the Laplacian terms of the base PDE residuals.
    """
    if order == 1:
        return FIRST_KEYS
    if order == 2:
        if pure_second_spatial:
            return FIRST_KEYS + ((0, 0), (1, 1))
        return FIRST_KEYS + SECOND_KEYS
    if order == 3:
        return FIRST_KEYS + SECOND_KEYS + THIRD_KEYS
    raise UnsupportedOrderError(f"jet order must be 1, 2 or 3, got {order}")


class MLPParams:
    """Weights/biases of a dense network stored as tape leaf tensors."""

    def __init__(self, weights, biases, activation: str):
        if activation not in ACTIVATIONS:
            raise StructuralError(f"unknown activation {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise StructuralError("need one bias per weight matrix")
        self.weights = [w if isinstance(w, Tensor) else Tensor(w, requires_grad=True) for w in weights]
        self.biases = [b if isinstance(b, Tensor) else Tensor(b, requires_grad=True) for b in biases]
        self.activation = activation
        prev_out = None
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[0] != b.data.shape[0]:
                raise StructuralError(f"layer {k}: weight {w.data.shape} / bias {b.data.shape}")
            if prev_out is not None and w.data.shape[1] != prev_out:
                raise StructuralError(
                    f"layer {k}: in_dim {w.data.shape[1]} != previous out_dim {prev_out}"
                )
            if not (np.isfinite(w.data).all() and np.isfinite(b.data).all()):
                raise StructuralError(f"layer {k}: non-finite parameter entries")
            prev_out = w.data.shape[0]

    @classmethod
    def init(cls, widths: Sequence[int], activation: str, rng: np.random.Generator):
        """Glorot-uniform init, bounds +/- sqrt(6 / (fan_in + fan_out))."""
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise StructuralError(f"invalid widths {widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].data.shape[1],) + tuple(w.data.shape[0] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[0]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_parameters(self) -> int:
        return sum(int(t.data.size) for t in self.parameters())

    def copy(self) -> "MLPParams":
        return MLPParams(
            [w.data.copy() for w in self.weights],
            [b.data.copy() for b in self.biases],
            self.activation,
        )


def mlp_forward(params: MLPParams, x) -> Tensor:
    """Plain forward pass; activation between layers only, none after the last.

    ``x`` is (batch, in_dim) or (in_dim,) as array or Tensor.
    """
    h = x if isinstance(x, Tensor) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if h.data.ndim != 2 or h.data.shape[1] != params.in_dim:
        raise StructuralError(
            f"input shape {h.data.shape} incompatible with in_dim {params.in_dim}"
        )
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.linear(h, w, b)
        if k != last:
            h = ad.act(h, params.activation, 0)
    return h


@dataclass
class JetBatch:
    """Per-batch network outputs with input partials, all on the tape.

    ``val`` is (batch, out_dim); ``d[key]`` matches.  Missing keys are exact
    structural zeros (only possible near the input layer).
    """

    val: Tensor
    d: dict

    def get(self, key):
        return self.d.get(key)


def _sorted_key(*idx):
    return tuple(sorted(idx))


def _act_jet(params_act: str, val: Tensor, d: dict, keys) -> tuple[Tensor, dict]:
    """Chain-rule composition of an elementwise activation with a jet."""
    if not keys:
        return ad.act(val, params_act, 0), {}
    max_order = max(len(k) for k in keys)
    family = ad.act_family(val, params_act, max_order)
    s0, s1 = family[0], family[1]
    s2 = family[2] if max_order >= 2 else None
    s3 = family[3] if max_order >= 3 else None
    out = {}
    for key in keys:
        if len(key) == 1:
            a = d.get(key)
            out[key] = ad.mul(s1, a) if a is not None else None
        elif len(key) == 2:
            i, j = key
            ai, aj = d.get((i,)), d.get((j,))
            term = None
            if ai is not None and aj is not None:
                term = ad.mul(s2, ad.mul(ai, aj))
            b = d.get(key)
            if b is not None:
                t2 = ad.mul(s1, b)
                term = t2 if term is None else ad.add(term, t2)
            out[key] = term
        else:
            i, j, k = key
            ai, aj, ak = d.get((i,)), d.get((j,)), d.get((k,))
            term = None
            if ai is not None and aj is not None and ak is not None:
                term = ad.mul(s3, ad.mul(ai, ad.mul(aj, ak)))
            for first, rest in ((i, (j, k)), (j, (i, k)), (k, (i, j))):
                a = d.get((first,))
                b = d.get(_sorted_key(*rest))
                if a is not None and b is not None:
                    t2 = ad.mul(s2, ad.mul(a, b))
                    term = t2 if term is None else ad.add(term, t2)
            c = d.get(key)
            if c is not None:
                t3 = ad.mul(s1, c)
                term = t3 if term is None else ad.add(term, t3)
            out[key] = term
    return s0, {k: v for k, v in out.items() if v is not None}


def mlp_jet_batch(params: MLPParams, points: np.ndarray, keys) -> JetBatch:
    """Propagate value + requested partials through the network.

    ``points`` is (batch, in_dim); the partials are taken w.r.t. the input
    coordinates indexed by the component keys.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != params.in_dim:
        raise StructuralError(
            f"points shape {pts.shape} incompatible with in_dim {params.in_dim}"
        )
    batch = pts.shape[0]
    val = ad.constant(pts)
    d = {}
    for key in keys:
        if len(key) == 1:
            seed = np.zeros((batch, params.in_dim))
            if key[0] < params.in_dim:
                seed[:, key[0]] = 1.0
            d[key] = ad.constant(seed)
        # Higher-order partials of the identity are structural zeros.
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        val = ad.linear(val, w, b)
        d = {key: ad.linear(t, w) for key, t in d.items()}
        if layer != last:
            val, d = _act_jet(params.activation, val, d, keys)
    return JetBatch(val=val, d=d)


@dataclass
class Jet:
    """One output coordinate's value and partials w.r.t. (x1, x2, t).

    ``d2``/``d3`` follow the key order of SECOND_KEYS/THIRD_KEYS and are
    present only when the corresponding order was requested.
    """

    value: float
    d1: np.ndarray
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None

    def partial(self, key: tuple[int, ...]) -> float:
        key = _sorted_key(*key)
        if key == ():
            return self.value
        if len(key) == 1:
            return float(self.d1[key[0]])
        if len(key) == 2 and self.d2 is not None:
            return float(self.d2[SECOND_KEYS.index(key)])
        if len(key) == 3 and self.d3 is not None:
            return float(self.d3[THIRD_KEYS.index(key)])
        raise UnsupportedOrderError(f"partial {key} not carried by this jet")

    def as_dict(self) -> dict:
        out = {(): self.value}
        for i, key in enumerate(FIRST_KEYS):
            out[key] = float(self.d1[i])
        if self.d2 is not None:
            for i, key in enumerate(SECOND_KEYS):
                out[key] = float(self.d2[i])
        if self.d3 is not None:
            for i, key in enumerate(THIRD_KEYS):
                out[key] = float(self.d3[i])
        return out


def _jets_from_batch(jb: JetBatch, order: int, row: int) -> list[Jet]:
    out_dim = jb.val.data.shape[1]
    jets = []
    for c in range(out_dim):
        d1 = np.array([jb.d[k].data[row, c] if k in jb.d else 0.0 for k in FIRST_KEYS])
        d2 = d3 = None
        if order >= 2:
            d2 = np.array([jb.d[k].data[row, c] if k in jb.d else 0.0 for k in SECOND_KEYS])
        if order >= 3:
            d3 = np.array([jb.d[k].data[row, c] if k in jb.d else 0.0 for k in THIRD_KEYS])
        jets.append(Jet(value=float(jb.val.data[row, c]), d1=d1, d2=d2, d3=d3))
    return jets


def mlp_jet(params: MLPParams, x, t: float, order: int = 2) -> list[Jet]:
    """Exact partials of every output coordinate at one point (x, t).

    ``params`` must accept 3 inputs (two spatial coordinates plus time).
    """
    if params.in_dim != 3:
        raise StructuralError(f"jet evaluation expects in_dim 3, got {params.in_dim}")
    keys = jet_keys(order)
    pt = np.array([[x[0], x[1], t]], dtype=np.float64)
    with ad.no_grad():
        jb = mlp_jet_batch(params, pt, keys)
    return _jets_from_batch(jb, order, 0)
