"""Multi-stage backbone: stacked graph layers with coarsening between.

Stage 1 runs a block of layers on the full-resolution graph. Each later
stage first halves the node count (pooling survivor features over their
closed neighborhood, or plain alternation for the -ss variants) and then
runs its own block on the coarser graph, whose connection window doubles.
Node counts follow ceil(N / 2^(l-1)); timestamps stay in seconds
throughout.

``backbone_forward`` returns every stage's (graph, features) pair so task
necks can pick the resolution they need, and the feature path stays
differentiable across the pooling steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor, add, div, gather_rows, relu, segment_max, segment_mean,
)
from .graph import EdgeRule, TemporalGraph, rebuild_edges, subsample_plan
from .layers import LAYER_KINDS, LayerKind, sinusoidal_pe

__all__ = ["BackboneConfig", "BackboneParams", "StageOutput",
           "backbone_forward", "pool_closed_neighborhood"]


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the pyramid.

    num_stages=1 keeps everything at full resolution (dense per-segment
    tasks); detection-style tasks use 4. ``disable_sign``/``disable_gate``
    only apply to the tdgc layer kind.
    """

    layer_kind: str = "tdgc"
    d_in: int = 32
    d_model: int = 32
    num_stages: int = 1
    layers_per_stage: int = 2
    threshold_s: float = 2.0
    pooling: str = "mean"
    gate_hidden: int | None = None
    disable_sign: bool = False
    disable_gate: bool = False

    @property
    def kind(self) -> LayerKind:
        return LAYER_KINDS[self.layer_kind]

    @property
    def edge_rule(self) -> EdgeRule:
        return EdgeRule(self.threshold_s)


@dataclass
class BackboneParams:
    """One layer-parameter block per stage."""

    stages: list[list] = field(default_factory=list)

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: BackboneConfig) -> "BackboneParams":
        kind = cfg.kind
        kwargs = {}
        if cfg.layer_kind == "tdgc":
            kwargs = dict(gate_hidden=cfg.gate_hidden,
                          disable_sign=cfg.disable_sign,
                          disable_gate=cfg.disable_gate)
        stages = []
        for stage in range(cfg.num_stages):
            block = []
            for layer in range(cfg.layers_per_stage):
                d_in = cfg.d_in if (stage == 0 and layer == 0) else cfg.d_model
                block.append(kind.init(rng, d_in, cfg.d_model, **kwargs))
            stages.append(block)
        return cls(stages)

    def params(self) -> list[Tensor]:
        return [t for block in self.stages for lp in block for t in lp.params()]


@dataclass
class StageOutput:
    """Graph topology and differentiable features at one pyramid stage."""

    graph: TemporalGraph
    features: Tensor


def pool_closed_neighborhood(x: Tensor, g: TemporalGraph, how: str) -> Tensor:
    """Pool each node's features over itself and its neighbors.

    Self-loops are appended before the segment reduction, so isolated
    nodes keep their own features under both mean and max.
    """
    loops = np.arange(g.num_nodes, dtype=np.intp)
    if len(g.edges):
        src = np.concatenate([g.edges[:, 0], loops])
        dst = np.concatenate([g.edges[:, 1], loops])
    else:
        src = dst = loops
    msg = gather_rows(x, dst)
    if how == "mean":
        return segment_mean(msg, src, g.num_nodes)
    if how == "max":
        return segment_max(msg, src, g.num_nodes)
    raise ValueError(f"unknown pooling {how!r}")


def _run_block(block: list, kind: LayerKind, g: TemporalGraph, x: Tensor) -> Tensor:
    """Layers of one stage with ReLU between them, linear at the end."""
    for i, lp in enumerate(block):
        if i:
            x = relu(x)
        x = kind.forward(lp, g, x)
    return x


def backbone_forward(params: BackboneParams, cfg: BackboneConfig,
                     graph: TemporalGraph, features: Tensor | None = None
                     ) -> list[StageOutput]:
    """Run every stage; returns one StageOutput per stage, fine to coarse.

    ``graph`` must be a stage-1 graph with edges already built. When
    ``features`` is omitted the graph's own feature array is used as a
    constant input.
    """
    if graph.stage != 1:
        raise ValueError("backbone expects a stage-1 graph")
    kind = cfg.kind
    x = features if features is not None else Tensor(graph.features)
    g = graph
    outputs: list[StageOutput] = []
    for stage_idx, block in enumerate(params.stages):
        if stage_idx > 0:
            keep_idx, new_bounds = subsample_plan(g, cfg.pooling)
            if cfg.pooling in ("mean", "max"):
                pooled = pool_closed_neighborhood(x, g, cfg.pooling)
            else:
                pooled = x
            x = gather_rows(pooled, keep_idx)
            g = TemporalGraph(
                features=x.data,
                positions_s=g.positions_s[keep_idx],
                edges=np.empty((0, 2), dtype=np.intp),
                stage=g.stage + 1,
                video_boundaries=new_bounds,
            )
            g = rebuild_edges(g, cfg.edge_rule)
        if kind.adds_time_encoding:
            x = add(x, Tensor(sinusoidal_pe(g.positions_s, x.shape[1])))
        x = _run_block(block, kind, g, x)
        outputs.append(StageOutput(graph=g, features=x))
    return outputs
