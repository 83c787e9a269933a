"""Text checkpoint format for the six-network operator bundle.

Layout (line oriented, whitespace separated, floats as %.17g so 64-bit
values round-trip exactly):

    GEONET-CKPT 1
    activation tanh
    p 32
    m 400
    sensors <nx> <ny> <x_min> <x_max> <y_min> <y_max>
    epoch <completed epochs>
    net branch0_cty <n_layers>
    W <out> <in>
    <out*in numbers on one line>
    b <out>
    <out numbers>
    ...                      # nets in declared order
    adam <step> | adam none
    <m then v lines per parameter, same order as the nets>
    end

Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os

import numpy as np

from .data import MeshSpec
from .errors import FormatError
from .nets import MLPParams
from .operator import OperatorParams
from .optim import Adam, AdamState

MAGIC = "GEONET-CKPT 1"
NET_ORDER = ("branch0_cty", "branch1_cty", "branch0_hj", "branch1_hj", "trunk_cty", "trunk_hj")


def _fmt(arr: np.ndarray) -> str:
    return " ".join(format(v, ".17g") for v in np.asarray(arr, dtype=np.float64).ravel())


def _write_net(lines: list, name: str, net: MLPParams) -> None:
    lines.append(f"net {name} {len(net.weights)}")
    for w, b in zip(net.weights, net.biases):
        out_dim, in_dim = w.data.shape
        lines.append(f"W {out_dim} {in_dim}")
        lines.append(_fmt(w.data))
        lines.append(f"b {out_dim}")
        lines.append(_fmt(b.data))


def save_checkpoint(path: str, params: OperatorParams, epoch: int, opt: Adam | None = None) -> None:
    mesh = params.sensor_mesh
    lines = [
        MAGIC,
        f"activation {params.trunk_cty.activation}",
        f"p {params.p}",
        f"m {params.m}",
        "sensors "
        + f"{mesh.nx} {mesh.ny} "
        + " ".join(format(v, ".17g") for v in mesh.bounds()),
        f"epoch {epoch}",
    ]
    nets = params.networks()
    for name in NET_ORDER:
        _write_net(lines, name, nets[name])
    if opt is None:
        lines.append("adam none")
    else:
        lines.append(f"adam {opt.state.step}")
        for m, v in zip(opt.state.m, opt.state.v):
            lines.append(_fmt(m))
            lines.append(_fmt(v))
    lines.append("end")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


class _Reader:
    def __init__(self, path: str):
        try:
            with open(path) as f:
                self.lines = f.read().splitlines()
        except OSError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        self.pos = 0
        self.path = path

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise FormatError(f"{self.path}: unexpected end of checkpoint")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect_kv(self, key: str) -> list[str]:
        parts = self.next().split()
        if not parts or parts[0] != key:
            raise FormatError(f"{self.path}: expected '{key} ...' at line {self.pos}")
        return parts[1:]

    def floats(self, count: int) -> np.ndarray:
        vals = np.array(self.next().split(), dtype=np.float64)
        if vals.size != count:
            raise FormatError(f"{self.path}: expected {count} values at line {self.pos}")
        return vals


def load_checkpoint(path: str):
    """Returns (OperatorParams, AdamState | None, epoch).

    Everything is parsed into a staging structure before any object is
    built, so a corrupted file leaves no partial state behind.
    """
    r = _Reader(path)
    if r.next() != MAGIC:
        raise FormatError(f"{path}: bad or unsupported checkpoint header")
    activation = r.expect_kv("activation")[0]
    p = int(r.expect_kv("p")[0])
    m = int(r.expect_kv("m")[0])
    sensor_parts = r.expect_kv("sensors")
    if len(sensor_parts) != 6:
        raise FormatError(f"{path}: sensors line needs nx ny and 4 bounds")
    nx, ny = int(sensor_parts[0]), int(sensor_parts[1])
    bounds = tuple(float(v) for v in sensor_parts[2:])
    epoch = int(r.expect_kv("epoch")[0])

    nets = {}
    for name in NET_ORDER:
        head = r.expect_kv("net")
        if head[0] != name:
            raise FormatError(f"{path}: expected net {name}, found {head[0]}")
        n_layers = int(head[1])
        weights, biases = [], []
        for _ in range(n_layers):
            out_dim, in_dim = (int(v) for v in r.expect_kv("W"))
            weights.append(r.floats(out_dim * in_dim).reshape(out_dim, in_dim))
            (bdim,) = (int(v) for v in r.expect_kv("b"))
            if bdim != out_dim:
                raise FormatError(f"{path}: bias/weight dim mismatch in {name}")
            biases.append(r.floats(bdim))
        nets[name] = (weights, biases)

    adam_parts = r.expect_kv("adam")
    state = None
    if adam_parts[0] != "none":
        step = int(adam_parts[0])
        ms, vs = [], []
        # One m line and one v line per parameter, parameters ordered as
        # the nets declare them: per layer, weight then bias.
        for name in NET_ORDER:
            weights, biases = nets[name]
            for w, b in zip(weights, biases):
                ms.append(r.floats(w.size).reshape(w.shape))
                vs.append(r.floats(w.size).reshape(w.shape))
                ms.append(r.floats(b.size))
                vs.append(r.floats(b.size))
        state = AdamState(m=ms, v=vs, step=step)
    if r.next() != "end":
        raise FormatError(f"{path}: missing end marker")

    mesh = MeshSpec(nx, ny, *bounds)
    params = OperatorParams(
        branch0_cty=MLPParams(*nets["branch0_cty"], activation),
        branch1_cty=MLPParams(*nets["branch1_cty"], activation),
        branch0_hj=MLPParams(*nets["branch0_hj"], activation),
        branch1_hj=MLPParams(*nets["branch1_hj"], activation),
        trunk_cty=MLPParams(*nets["trunk_cty"], activation),
        trunk_hj=MLPParams(*nets["trunk_hj"], activation),
        p=p,
        m=m,
        sensor_mesh=mesh,
    )
    return params, state, epoch
