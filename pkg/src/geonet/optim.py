"""Loss backpropagation entry point and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NonFiniteError, StructuralError
from .nets import MLPParams


@dataclass
class GradBuffer:
    """Per-parameter gradient accumulators mirroring an MLPParams shape."""

    weights: list
    biases: list
    scale: float = 1.0

    @classmethod
    def from_params(cls, params: MLPParams) -> "GradBuffer":
        return cls(
            weights=[w.grad if w.grad is not None else np.zeros_like(w.data) for w in params.weights],
            biases=[b.grad if b.grad is not None else np.zeros_like(b.data) for b in params.biases],
        )

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w if self.scale == 1.0 else self.scale * w)
            out.append(b if self.scale == 1.0 else self.scale * b)
        return out


def zero_grads(nets) -> None:
    for net in nets:
        for t in net.parameters():
            t.grad = None


def backprop(loss: Tensor, nets) -> list[GradBuffer]:
    """Exact gradient of a recorded scalar loss w.r.t. every net parameter.

    Gradients are cleared first, so the buffers reflect this loss alone.
    Parameters the loss never touched get zero buffers.
    """
    if loss.data.shape != ():
        raise StructuralError(f"loss must be scalar, got shape {loss.data.shape}")
    zero_grads(nets)
    loss.backward()
    return [GradBuffer.from_params(net) for net in nets]


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def like(cls, tensors) -> "AdamState":
        return cls(
            m=[np.zeros_like(t.data) for t in tensors],
            v=[np.zeros_like(t.data) for t in tensors],
        )


class Adam:
    """Standard Adam with bias correction; updates tensors in place."""

    def __init__(self, tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise StructuralError(f"lr must be positive, got {lr}")
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.like(self.tensors)

    def step(self, grads=None) -> None:
        """One update using ``grads`` (or each tensor's .grad when omitted)."""
        if grads is None:
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors]
        if len(grads) != len(self.tensors):
            raise StructuralError("gradient list does not match parameter list")
        for g in grads:
            if not np.isfinite(g).all():
                raise NonFiniteError("non-finite gradient entries; aborting update")
        st = self.state
        st.step += 1
        c1 = 1.0 - self.beta1**st.step
        c2 = 1.0 - self.beta2**st.step
        for t, g, m, v in zip(self.tensors, grads, st.m, st.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def adam_step(nets, grad_buffers, opt: Adam) -> None:
    """Apply one Adam update from per-network GradBuffers.

    ``opt`` must have been constructed over the same nets in the same order.
    """
    flat = []
    for gb in grad_buffers:
        flat.extend(gb.arrays())
    opt.step(flat)
