"""Graph layers over temporal graphs.

The main layer (``tdgc_forward``) aggregates neighbors with two
time-derived modulations: a direction sign (past vs future neighbor) and a
magnitude gate (a small MLP of the absolute time offset). Both are what
give the layer its ability to distinguish event order; each can be
disabled independently for ablations.

The rest of the zoo exists for controlled comparisons: GCN, one-head GAT,
GraphSAGE, GraphSAGE with sinusoidal time encodings, and a sign-aware GCN
variant with separate past/future projections.

All forwards share the signature ``forward(params, graph, x)`` with ``x``
a (N, d_in) Tensor, returning (N, d_out). Layers are linear at the output;
activations between layers are the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (
    Tensor, add, div, exp, gather_rows, leaky_relu, matmul, mul, relu,
    segment_mean, segment_sum, sub, tsum,
)
from .graph import TemporalGraph
from .optim import uniform_fan_in

__all__ = [
    "TdgcParams", "tdgc_forward", "GcnParams", "gcn_forward",
    "GatParams", "gat_forward", "SageParams", "sage_forward",
    "SgcnParams", "sgcn_forward", "sinusoidal_pe", "LayerKind", "LAYER_KINDS",
]


def _linear_init(rng: np.random.Generator, d_in: int, d_out: int):
    w = Tensor(uniform_fan_in(rng, (d_in, d_out)), requires_grad=True)
    b = Tensor(uniform_fan_in(rng, (d_out,), fan_in=d_in), requires_grad=True)
    return w, b


# ---------------------------------------------------------------------------
# time-difference graph convolution
# ---------------------------------------------------------------------------

@dataclass
class TdgcParams:
    """Weights for one time-difference graph convolution layer.

    The neighbor projection is shared across past and future neighbors;
    direction enters only through the per-edge sign, magnitude only through
    the gate MLP (absolute time offset -> per-channel weights, ReLU kept
    non-negative). ``gate_hidden`` inserts an optional hidden layer in the
    gate.
    """

    w_root: Tensor
    b_root: Tensor
    w_nbr: Tensor
    b_nbr: Tensor
    gate: list[Tensor]  # [w, b] or [w1, b1, w2, b2]
    disable_sign: bool = False
    disable_gate: bool = False

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int,
             gate_hidden: int | None = None, disable_sign: bool = False,
             disable_gate: bool = False) -> "TdgcParams":
        w_root, b_root = _linear_init(rng, d_in, d_out)
        w_nbr, b_nbr = _linear_init(rng, d_in, d_out)
        # The gate's output affine starts at weight 0, bias 1 so the gate is
        # an exact pass-through at init. A random start would leave the ReLU
        # dead on about half the channels, and with a constant time offset
        # per stage those channels would never receive gradient again.
        if gate_hidden is None:
            gw = Tensor(np.zeros((1, d_out)), requires_grad=True)
            gb = Tensor(np.ones(d_out), requires_grad=True)
            gate = [gw, gb]
        else:
            g1w, g1b = _linear_init(rng, 1, gate_hidden)
            g2w = Tensor(np.zeros((gate_hidden, d_out)), requires_grad=True)
            g2b = Tensor(np.ones(d_out), requires_grad=True)
            gate = [g1w, g1b, g2w, g2b]
        return cls(w_root, b_root, w_nbr, b_nbr, gate,
                   disable_sign=disable_sign, disable_gate=disable_gate)

    def params(self) -> list[Tensor]:
        return [self.w_root, self.b_root, self.w_nbr, self.b_nbr, *self.gate]


def _gate_weights(p: TdgcParams, abs_dt: np.ndarray) -> Tensor:
    """Per-edge per-channel gate from the absolute time offset."""
    h = Tensor(abs_dt.reshape(-1, 1))
    if len(p.gate) == 2:
        return relu(add(matmul(h, p.gate[0]), p.gate[1]))
    h = relu(add(matmul(h, p.gate[0]), p.gate[1]))
    return relu(add(matmul(h, p.gate[2]), p.gate[3]))


def tdgc_forward(p: TdgcParams, g: TemporalGraph, x: Tensor) -> Tensor:
    """out_i = x_i W_r + b_r + mean_{j in N(i)} s_ij * (w_ij * f(x_j W_n + b_n))

    with s_ij the sign of (t_i - t_j), w_ij the magnitude gate, and f ReLU.
    Nodes without neighbors reduce exactly to the root projection.
    """
    root = add(matmul(x, p.w_root), p.b_root)
    if len(g.edges) == 0:
        return root
    src, dst = g.edges[:, 0], g.edges[:, 1]
    h = relu(add(matmul(x, p.w_nbr), p.b_nbr))
    msg = gather_rows(h, dst)
    dt = g.positions_s[src] - g.positions_s[dst]
    if not p.disable_gate:
        msg = mul(msg, _gate_weights(p, np.abs(dt)))
    if not p.disable_sign:
        msg = mul(msg, Tensor(np.sign(dt).reshape(-1, 1)))
    agg = segment_mean(msg, src, g.num_nodes)
    return add(root, agg)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

@dataclass
class GcnParams:
    """Plain graph convolution with self-loops and symmetric normalization."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "GcnParams":
        return cls(*_linear_init(rng, d_in, d_out))

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


def _loop_degrees(g: TemporalGraph) -> np.ndarray:
    """Node degrees counting the implicit self-loop."""
    deg = np.ones(g.num_nodes)
    if len(g.edges):
        np.add.at(deg, g.edges[:, 0], 1.0)
    return deg


def gcn_forward(p: GcnParams, g: TemporalGraph, x: Tensor) -> Tensor:
    h = matmul(x, p.w)
    deg = _loop_degrees(g)
    out = mul(h, Tensor((1.0 / deg).reshape(-1, 1)))  # self-loop term
    if len(g.edges):
        src, dst = g.edges[:, 0], g.edges[:, 1]
        norm = 1.0 / np.sqrt(deg[src] * deg[dst])
        msg = mul(gather_rows(h, dst), Tensor(norm.reshape(-1, 1)))
        out = add(out, segment_sum(msg, src, g.num_nodes))
    return add(out, p.b)


@dataclass
class GatParams:
    """Single-head graph attention with self-loops.

    Edge scores are LeakyReLU(0.2) of a_src . h_i + a_dst . h_j, softmaxed
    over each node's closed neighborhood.
    """

    w: Tensor
    b: Tensor
    a_src: Tensor
    a_dst: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "GatParams":
        w, b = _linear_init(rng, d_in, d_out)
        a_src = Tensor(uniform_fan_in(rng, (d_out, 1)), requires_grad=True)
        a_dst = Tensor(uniform_fan_in(rng, (d_out, 1)), requires_grad=True)
        return cls(w, b, a_src, a_dst)

    def params(self) -> list[Tensor]:
        return [self.w, self.b, self.a_src, self.a_dst]


def gat_forward(p: GatParams, g: TemporalGraph, x: Tensor) -> Tensor:
    n = g.num_nodes
    loops = np.arange(n, dtype=np.intp)
    if len(g.edges):
        src = np.concatenate([g.edges[:, 0], loops])
        dst = np.concatenate([g.edges[:, 1], loops])
    else:
        src = dst = loops
    h = matmul(x, p.w)
    score_src = matmul(h, p.a_src)  # (N, 1)
    score_dst = matmul(h, p.a_dst)
    e = leaky_relu(add(gather_rows(score_src, src), gather_rows(score_dst, dst)), 0.2)
    # segment softmax over receivers; the per-segment max is a constant shift
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, src, e.data[:, 0])
    z = exp(sub(e, Tensor(seg_max[src].reshape(-1, 1))))
    denom = segment_sum(z, src, n)
    alpha = div(z, gather_rows(denom, src))
    msg = mul(gather_rows(h, dst), alpha)
    return add(segment_sum(msg, src, n), p.b)


@dataclass
class SageParams:
    """GraphSAGE: root projection plus mean of projected neighbors."""

    w_root: Tensor
    b: Tensor
    w_nbr: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "SageParams":
        w_root, b = _linear_init(rng, d_in, d_out)
        w_nbr, _ = _linear_init(rng, d_in, d_out)
        return cls(w_root, b, w_nbr)

    def params(self) -> list[Tensor]:
        return [self.w_root, self.b, self.w_nbr]


def sage_forward(p: SageParams, g: TemporalGraph, x: Tensor) -> Tensor:
    out = add(matmul(x, p.w_root), p.b)
    if len(g.edges):
        src, dst = g.edges[:, 0], g.edges[:, 1]
        msg = gather_rows(matmul(x, p.w_nbr), dst)
        out = add(out, segment_mean(msg, src, g.num_nodes))
    return out


@dataclass
class SgcnParams:
    """GCN aggregation with separate projections for past and future
    neighbors (time ties and self-loops count as past)."""

    w_past: Tensor
    w_future: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "SgcnParams":
        w_past, b = _linear_init(rng, d_in, d_out)
        w_future, _ = _linear_init(rng, d_in, d_out)
        return cls(w_past, w_future, b)

    def params(self) -> list[Tensor]:
        return [self.w_past, self.w_future, self.b]


def sgcn_forward(p: SgcnParams, g: TemporalGraph, x: Tensor) -> Tensor:
    h_past = matmul(x, p.w_past)
    h_future = matmul(x, p.w_future)
    deg = _loop_degrees(g)
    out = mul(h_past, Tensor((1.0 / deg).reshape(-1, 1)))  # self-loop, dt = 0
    if len(g.edges):
        src, dst = g.edges[:, 0], g.edges[:, 1]
        norm = (1.0 / np.sqrt(deg[src] * deg[dst])).reshape(-1, 1)
        is_past = (g.positions_s[dst] <= g.positions_s[src]).reshape(-1, 1)
        msg = add(mul(gather_rows(h_past, dst), Tensor(is_past * norm)),
                  mul(gather_rows(h_future, dst), Tensor(~is_past * norm)))
        out = add(out, segment_sum(msg, src, g.num_nodes))
    return add(out, p.b)


# ---------------------------------------------------------------------------
# sinusoidal time encoding (for the SAGE+PE baseline)
# ---------------------------------------------------------------------------

def sinusoidal_pe(positions_s: np.ndarray, dim: int) -> np.ndarray:
    """Classic sin/cos encoding evaluated at continuous times in seconds."""
    if dim % 2:
        raise ValueError("encoding dim must be even")
    pos = np.asarray(positions_s, dtype=np.float64).reshape(-1, 1)
    k = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2.0 * k / dim))
    angles = pos * freq
    out = np.empty((pos.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


# ---------------------------------------------------------------------------
# registry used by the backbone and comparison harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerKind:
    """How to build and run one layer family.

    ``adds_time_encoding`` asks the backbone to add ``sinusoidal_pe`` to
    the features entering each pyramid stage.
    """

    name: str
    init: Callable
    forward: Callable
    adds_time_encoding: bool = False


LAYER_KINDS: dict[str, LayerKind] = {
    "tdgc": LayerKind("tdgc", TdgcParams.init, tdgc_forward),
    "gcn": LayerKind("gcn", GcnParams.init, gcn_forward),
    "gat": LayerKind("gat", GatParams.init, gat_forward),
    "sage": LayerKind("sage", SageParams.init, sage_forward),
    "sage-pe": LayerKind("sage-pe", SageParams.init, sage_forward,
                         adds_time_encoding=True),
    "sgcn": LayerKind("sgcn", SgcnParams.init, sgcn_forward),
}
