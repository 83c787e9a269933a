"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

The engine is a dynamic tape: every op returns a ``Tensor`` that remembers its
parents and a backward closure.  Ops only record when gradient tracking is
globally enabled (see ``no_grad``) and at least one input requires gradients,
so pure inference pays no tape overhead.

The op set is deliberately narrow: dense linear layers, elementwise
arithmetic, activation-derivative primitives up to third order, reductions
and row gathering.  There is no control flow on the tape.  Everything is
float64; that headroom is required by the finite-difference validation the
test suite runs against every derivative path.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import StructuralError, UnsupportedOrderError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 ndarray plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_shared")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._grad_shared = False

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def _accum(self, g):
        # The first contribution is stored by reference and marked shared;
        # arrays we do not own are never mutated in place.
        if self.grad is None:
            self.grad = g
            self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + g
            self._grad_shared = False
        else:
            self.grad += g

    def backward(self, seed=None):
        """Reverse accumulation from this tensor; seeds with ones by default."""
        if seed is None:
            seed = np.ones_like(self.data)
        # Iterative post-order topo sort; graphs can be deep enough that
        # recursion is not safe.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accum(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; scalars are folded in as constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(data):
    """A tensor that never receives gradients."""
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        if a.requires_grad or a._backward is not None:
            a._accum(g)
        if b.requires_grad or b._backward is not None:
            b._accum(g)

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(-g)

    return _result(-a.data, (a,), backward)


def shift(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accum(g)

    return _result(a.data + c, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        if a.requires_grad or a._backward is not None:
            a._accum(g * b.data)
        if b.requires_grad or b._backward is not None:
            b._accum(g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accum(g * c)

    return _result(a.data * c, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(g * (2.0 * a.data))

    return _result(a.data * a.data, (a,), backward)


def tsum(a: Tensor, axis=None) -> Tensor:
    """Sum over all entries (axis=None) or one axis."""

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _result(a.data.sum(axis=axis), (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` shaped (out, in), x (batch, in)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise StructuralError(
            f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape}"
        )
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def backward(g):
        if x.requires_grad or x._backward is not None:
            x._accum(g @ w.data)
        if w.requires_grad or w._backward is not None:
            w._accum(g.T @ x.data)
        if b is not None and (b.requires_grad or b._backward is not None):
            b._accum(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, backward)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather ``x[idx]``; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        x._accum(acc)

    return _result(x.data[idx], (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice x[start:stop]; backward pads with zeros."""

    def backward(g):
        acc = np.zeros_like(x.data)
        acc[start:stop] = g
        x._accum(acc)

    return _result(x.data[start:stop], (x,), backward)


# ---------------------------------------------------------------------------
# Activation derivative tables.
#
# Jet propagation through a hidden layer needs sigma^(n) for n up to the jet
# order; backpropagating through a sigma^(n) node needs sigma^(n+1) as plain
# data.  Orders 0..3 are exposed as tape ops, order 4 exists only for their
# backward passes.  The transcendental parts (tanh / erf / exp) are computed
# once per input and every derivative order is a cheap polynomial in them.


def _tanh_parts(x):
    y = np.tanh(x)
    y2 = y * y
    return (y, y2, 1.0 - y2)


def _tanh_from_parts(x, parts, n):
    y, y2, s = parts
    if n == 0:
        return y
    if n == 1:
        return s
    if n == 2:
        return -2.0 * y * s
    if n == 3:
        return s * (6.0 * y2 - 2.0)
    if n == 4:
        return s * y * (16.0 - 24.0 * y2)
    raise UnsupportedOrderError(f"tanh derivative order {n} not implemented")


def _gelu_parts(x):
    # Exact erf form: gelu(x) = x * Phi(x) with Phi the standard normal CDF.
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return (phi, cdf)


def _gelu_from_parts(x, parts, n):
    phi, cdf = parts
    if n == 0:
        return x * cdf
    if n == 1:
        return cdf + x * phi
    if n == 2:
        return phi * (2.0 - x * x)
    if n == 3:
        return phi * x * (x * x - 4.0)
    if n == 4:
        xx = x * x
        return phi * (-xx * xx + 7.0 * xx - 4.0)
    raise UnsupportedOrderError(f"gelu derivative order {n} not implemented")


_ACT_TABLE = {
    "tanh": (_tanh_parts, _tanh_from_parts),
    "gelu": (_gelu_parts, _gelu_from_parts),
}

# Highest sigma^(n) that can appear on the tape (order-3 jets); n+1 must
# still exist as raw data for the backward pass.
MAX_TAPE_ACT_ORDER = 3


def act_nth(kind: str, n: int, x: np.ndarray) -> np.ndarray:
    """sigma^(n)(x) as plain data (no tape)."""
    try:
        parts_fn, from_parts = _ACT_TABLE[kind]
    except KeyError:
        raise StructuralError(f"unknown activation {kind!r}") from None
    return from_parts(x, parts_fn(x), n)


def act_family(x: Tensor, kind: str, max_order: int) -> list[Tensor]:
    """Tape ops [sigma(x), sigma'(x), ..., sigma^(max_order)(x)].

    The transcendental parts are evaluated once and shared by every order's
    forward and backward pass.
    """
    if max_order > MAX_TAPE_ACT_ORDER:
        raise UnsupportedOrderError(
            f"activation derivative order {max_order} exceeds tape limit {MAX_TAPE_ACT_ORDER}"
        )
    try:
        parts_fn, from_parts = _ACT_TABLE[kind]
    except KeyError:
        raise StructuralError(f"unknown activation {kind!r}") from None
    parts = parts_fn(x.data)
    outs = []
    for n in range(max_order + 1):
        def backward(g, _n=n):
            x._accum(g * from_parts(x.data, parts, _n + 1))

        outs.append(_result(from_parts(x.data, parts, n), (x,), backward))
    return outs


def act(x: Tensor, kind: str, n: int = 0) -> Tensor:
    """Tape op computing sigma^(n)(x); backward uses sigma^(n+1)."""
    if n > MAX_TAPE_ACT_ORDER:
        raise UnsupportedOrderError(
            f"activation derivative order {n} exceeds tape limit {MAX_TAPE_ACT_ORDER}"
        )
    try:
        parts_fn, from_parts = _ACT_TABLE[kind]
    except KeyError:
        raise StructuralError(f"unknown activation {kind!r}") from None
    parts = parts_fn(x.data)
    y = from_parts(x.data, parts, n)

    def backward(g):
        x._accum(g * from_parts(x.data, parts, n + 1))

    return _result(y, (x,), backward)
