"""Task-specific processing on top of the shared backbone.

Every task follows the same shape: the backbone produces per-segment
features, a per-task neck (two-layer MLP) reprojects them, an alignment
step turns node features into per-annotation features where the task needs
it, and a small head produces the output. Heads stay deliberately thin so
the backbone and necks carry the representation.

Tasks covered:
  - clip classification over an annotated interval (recognition,
    state-change detection) via ``align_video_intervals`` + classifier;
  - per-node keyframe scoring (a linear scorer trained with BCE);
  - forecasting: a small fully-connected future graph seeded by tiling the
    observed-context vector, refined by two time-aware layers;
  - moment queries: anchor-free per-node detection at every pyramid stage
    (class probabilities + boundary offsets), decoded back to intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, add, clip, div, gather_rows, log, matmul, maximum, minimum,
    mul, power, relu, segment_mean, sigmoid, softplus, sub, take_cols,
    tmean, tsum,
)
from .graph import TemporalGraph, build_graph, EdgeRule
from .layers import TdgcParams, tdgc_forward
from .optim import uniform_fan_in

__all__ = [
    "NeckParams", "neck_forward", "ClassifierParams", "classifier_forward",
    "ScorerParams", "scorer_forward", "LtaParams", "lta_forward",
    "lta_candidates", "MqParams", "mq_forward", "mq_decode", "mq_targets",
    "align_intervals", "align_video_intervals",
    "bce_with_logits", "focal_loss", "diou_loss",
]


def _linear(rng, d_in, d_out):
    w = Tensor(uniform_fan_in(rng, (d_in, d_out)), requires_grad=True)
    b = Tensor(uniform_fan_in(rng, (d_out,), fan_in=d_in), requires_grad=True)
    return w, b


# ---------------------------------------------------------------------------
# necks and alignment
# ---------------------------------------------------------------------------

@dataclass
class NeckParams:
    """Two-layer per-task projection, dimension preserving."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, dim: int) -> "NeckParams":
        return cls(*_linear(rng, dim, dim), *_linear(rng, dim, dim))

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def neck_forward(p: NeckParams, x: Tensor) -> Tensor:
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2)


def align_intervals(x: Tensor, positions_s: np.ndarray,
                    intervals: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Average node features over each time interval.

    A node belongs to interval (start, end) when start < t < end, both
    strict. An interval capturing no node falls back to the single node
    nearest its midpoint; the second return value flags those rows.
    ``positions_s`` and ``x`` must come from one video so times compare.
    """
    intervals = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    m = intervals.shape[0]
    member_nodes: list[np.ndarray] = []
    member_ids: list[np.ndarray] = []
    fallback = np.zeros(m, dtype=bool)
    for i, (start, end) in enumerate(intervals):
        inside = np.nonzero((positions_s > start) & (positions_s < end))[0]
        if len(inside) == 0:
            mid = 0.5 * (start + end)
            inside = np.array([np.argmin(np.abs(positions_s - mid))], dtype=np.intp)
            fallback[i] = True
        member_nodes.append(inside)
        member_ids.append(np.full(len(inside), i, dtype=np.intp))
    nodes = np.concatenate(member_nodes)
    ids = np.concatenate(member_ids)
    pooled = segment_mean(gather_rows(x, nodes), ids, m)
    return pooled, fallback


def align_video_intervals(x: Tensor, g: TemporalGraph, video: int,
                          intervals: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """``align_intervals`` restricted to one video of a batch graph."""
    sl = g.video_slice(video)
    rows = gather_rows(x, np.arange(sl.start, sl.stop, dtype=np.intp))
    return align_intervals(rows, g.positions_s[sl], intervals)


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

@dataclass
class ClassifierParams:
    """Two-layer MLP classifier."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, dim: int, num_classes: int) -> "ClassifierParams":
        return cls(*_linear(rng, dim, dim), *_linear(rng, dim, num_classes))

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def classifier_forward(p: ClassifierParams, x: Tensor) -> Tensor:
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2)


@dataclass
class ScorerParams:
    """Linear per-node scorer producing one logit."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, dim: int) -> "ScorerParams":
        return cls(*_linear(rng, dim, 1))

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


def scorer_forward(p: ScorerParams, x: Tensor) -> Tensor:
    return add(matmul(x, p.w), p.b)


@dataclass
class LtaParams:
    """Forecasting head: refine a tiled context over a future graph.

    The future is modeled as ``num_steps`` placeholder nodes at times
    1..Z seconds, fully connected, every node starting from the same
    observed-context vector. Two time-aware layers differentiate the steps
    before per-step verb and noun classification.
    """

    refine1: TdgcParams
    refine2: TdgcParams
    verb_cls: ClassifierParams
    noun_cls: ClassifierParams
    num_steps: int

    @classmethod
    def init(cls, rng, dim: int, num_verbs: int, num_nouns: int,
             num_steps: int) -> "LtaParams":
        return cls(
            refine1=TdgcParams.init(rng, dim, dim),
            refine2=TdgcParams.init(rng, dim, dim),
            verb_cls=ClassifierParams.init(rng, dim, num_verbs),
            noun_cls=ClassifierParams.init(rng, dim, num_nouns),
            num_steps=num_steps,
        )

    def params(self) -> list[Tensor]:
        return (self.refine1.params() + self.refine2.params()
                + self.verb_cls.params() + self.noun_cls.params())


def _future_graph(num_contexts: int, num_steps: int, dim: int) -> TemporalGraph:
    positions = np.tile(np.arange(1, num_steps + 1, dtype=np.float64),
                        num_contexts)
    bounds = np.arange(num_contexts + 1) * num_steps
    return build_graph(np.zeros((num_contexts * num_steps, dim)), positions,
                       bounds, rule=EdgeRule(threshold_s=float(num_steps + 1)))


def lta_forward(p: LtaParams, context: Tensor) -> tuple[Tensor, Tensor]:
    """Per-step verb and noun logits for each context row.

    ``context`` is (M, D); the outputs are (M * num_steps, classes) with
    context m's steps occupying rows m*num_steps .. (m+1)*num_steps - 1.
    Each context gets its own fully connected run of future placeholders,
    kept separate through the video boundaries of the shared graph.
    """
    m = context.shape[0]
    g = _future_graph(m, p.num_steps, context.shape[1])
    x = gather_rows(context, np.repeat(np.arange(m), p.num_steps))
    x = relu(tdgc_forward(p.refine1, g, x))
    x = tdgc_forward(p.refine2, g, x)
    return classifier_forward(p.verb_cls, x), classifier_forward(p.noun_cls, x)


def lta_candidates(verb_logits: np.ndarray, noun_logits: np.ndarray,
                   k: int, rng: np.random.Generator
                   ) -> list[tuple[np.ndarray, np.ndarray]]:
    """K candidate future sequences: the argmax one, then sampled ones.

    Sampling draws each step independently from the softmax distribution,
    so candidates are deterministic given the generator state.
    """
    def rows_softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    out = [(verb_logits.argmax(axis=1), noun_logits.argmax(axis=1))]
    pv, pn = rows_softmax(verb_logits), rows_softmax(noun_logits)
    z = verb_logits.shape[0]
    for _ in range(k - 1):
        verbs = np.array([rng.choice(pv.shape[1], p=pv[i]) for i in range(z)])
        nouns = np.array([rng.choice(pn.shape[1], p=pn[i]) for i in range(z)])
        out.append((verbs, nouns))
    return out


@dataclass
class MqParams:
    """Anchor-free per-node detection head shared across pyramid stages."""

    w_cls: Tensor
    b_cls: Tensor
    w_reg: Tensor
    b_reg: Tensor

    @classmethod
    def init(cls, rng, dim: int, num_classes: int) -> "MqParams":
        w_cls, b_cls = _linear(rng, dim, num_classes)
        w_reg, b_reg = _linear(rng, dim, 2)
        return cls(w_cls, b_cls, w_reg, b_reg)

    def params(self) -> list[Tensor]:
        return [self.w_cls, self.b_cls, self.w_reg, self.b_reg]


def mq_forward(p: MqParams, x: Tensor, stage: int) -> tuple[Tensor, Tensor]:
    """Class probabilities (N, C) and boundary offsets in seconds (N, 2).

    Offsets are kept positive by softplus and scaled by the stage's
    doubling factor, so coarse stages regress proportionally longer spans
    from the same parameter range.
    """
    scores = sigmoid(add(matmul(x, p.w_cls), p.b_cls))
    offsets = mul(softplus(add(matmul(x, p.w_reg), p.b_reg)),
                  Tensor(np.array(2.0 ** (stage - 1))))
    return scores, offsets


def mq_decode(positions_s: np.ndarray, scores: np.ndarray,
              offsets_s: np.ndarray, extent_s: tuple[float, float],
              min_score: float = 0.0):
    """Turn per-node predictions into candidate intervals.

    Each node proposes, per class, the interval
    [t - offset_left, t + offset_right] clamped to the video extent.
    Degenerate proposals (no positive length after clamping) and proposals
    below ``min_score`` are dropped. Returns (intervals (K, 2), scores
    (K,), classes (K,)) in node-major, class-minor order.
    """
    positions_s = np.asarray(positions_s, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    offsets_s = np.asarray(offsets_s, dtype=np.float64)
    lo, hi = float(extent_s[0]), float(extent_s[1])
    n, c = scores.shape
    starts = np.clip(positions_s - offsets_s[:, 0], lo, hi)
    ends = np.clip(positions_s + offsets_s[:, 1], lo, hi)
    ivals, svals, cvals = [], [], []
    for i in range(n):
        if ends[i] <= starts[i]:
            continue
        for cls in range(c):
            if scores[i, cls] < min_score:
                continue
            ivals.append((starts[i], ends[i]))
            svals.append(scores[i, cls])
            cvals.append(cls)
    if not ivals:
        return (np.empty((0, 2)), np.empty(0), np.empty(0, dtype=np.intp))
    return (np.asarray(ivals, dtype=np.float64), np.asarray(svals, dtype=np.float64),
            np.asarray(cvals, dtype=np.intp))


def mq_targets(positions_s: np.ndarray, stage: int, segments: np.ndarray,
               labels: np.ndarray, num_classes: int):
    """Per-node supervision for the detection head at one stage.

    A node is positive for the shortest ground-truth segment containing
    its timestamp (inclusive bounds). Positives get a one-hot class row
    and boundary offsets divided by the stage scale, matching the head's
    pre-scale output; everything else stays zero.

    Returns (class_target (N, C), offset_target (N, 2), positive_mask (N,)).
    """
    positions_s = np.asarray(positions_s, dtype=np.float64)
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.intp)
    n = positions_s.shape[0]
    cls_t = np.zeros((n, num_classes))
    off_t = np.zeros((n, 2))
    pos_mask = np.zeros(n, dtype=bool)
    scale = 2.0 ** (stage - 1)
    durations = segments[:, 1] - segments[:, 0]
    for i, t in enumerate(positions_s):
        inside = np.nonzero((segments[:, 0] <= t) & (t <= segments[:, 1]))[0]
        if len(inside) == 0:
            continue
        best = inside[np.argmin(durations[inside])]
        pos_mask[i] = True
        cls_t[i, labels[best]] = 1.0
        off_t[i, 0] = (t - segments[best, 0]) / scale
        off_t[i, 1] = (segments[best, 1] - t) / scale
    return cls_t, off_t, pos_mask


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross entropy, stable for large |logit|."""
    t = Tensor(np.asarray(targets, dtype=np.float64).reshape(logits.shape))
    return tmean(sub(softplus(logits), mul(logits, t)))


def focal_loss(probs: Tensor, targets: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0, normalizer: float | None = None) -> Tensor:
    """Focal binary loss on probabilities.

    Positives: -alpha * (1-p)^gamma * log(p); negatives:
    -(1-alpha) * p^gamma * log(1-p). Probabilities are clamped away from
    0 and 1. The sum is divided by ``normalizer`` (element count when not
    given); detection training passes the positive count instead.
    """
    t = np.asarray(targets, dtype=np.float64).reshape(probs.shape)
    p = clip(probs, 1e-7, 1.0 - 1e-7)
    pos = mul(mul(power(sub(Tensor(1.0), p), gamma), log(p)), Tensor(-alpha * t))
    neg = mul(mul(power(p, gamma), log(sub(Tensor(1.0), p))),
              Tensor(-(1.0 - alpha) * (1.0 - t)))
    total = tsum(add(pos, neg))
    if normalizer is None:
        normalizer = float(probs.size)
    return div(total, Tensor(float(normalizer)))


def diou_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Distance-IoU loss for 1-D intervals, averaged over rows.

    ``pred`` and ``target`` are (M, 2) [start, end]. The penalty term is
    the squared center distance over the squared enclosing span, pulling
    disjoint intervals together where plain IoU has no gradient.
    """
    tgt = Tensor(np.asarray(target, dtype=np.float64).reshape(-1, 2))
    ps, pe = take_cols(pred, [0]), take_cols(pred, [1])
    ts, te = take_cols(tgt, [0]), take_cols(tgt, [1])
    inter = relu(sub(minimum(pe, te), maximum(ps, ts)))
    union = sub(add(sub(pe, ps), sub(te, ts)), inter)
    iou = div(inter, union)
    center_gap = sub(mul(add(ps, pe), Tensor(0.5)), mul(add(ts, te), Tensor(0.5)))
    span = sub(maximum(pe, te), minimum(ps, ts))
    penalty = div(mul(center_gap, center_gap), mul(span, span))
    return tmean(add(sub(Tensor(1.0), iou), penalty))
