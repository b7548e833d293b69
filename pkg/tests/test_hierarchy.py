"""Backbone pyramid tests: stage shapes, coarsening law, pooled feature
paths, and differentiability through the full stack."""

import numpy as np
import pytest

from tgk.autodiff import GradientTape, Tensor, backward, tsum
from tgk.graph import EdgeRule, build_graph
from tgk.hierarchy import (
    BackboneConfig,
    BackboneParams,
    backbone_forward,
    pool_closed_neighborhood,
)
from tgk.layers import sinusoidal_pe
from tgk.optim import finite_diff_check


def make_graph(rng, sizes, d=6, spacing=1.0, window=1.5):
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    positions = np.concatenate([
        np.arange(s, dtype=np.float64) * spacing for s in sizes
    ])
    feats = rng.normal(size=(int(bounds[-1]), d))
    return build_graph(feats, positions, bounds, rule=EdgeRule(threshold_s=window))


# ---------------------------------------------------------------------------
# stage structure
# ---------------------------------------------------------------------------


def test_node_counts_follow_ceil_halving():
    rng = np.random.default_rng(0)
    cfg = BackboneConfig(d_in=6, d_model=8, num_stages=4)
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [64])
    outs = backbone_forward(params, cfg, g)
    assert [o.graph.num_nodes for o in outs] == [64, 32, 16, 8]
    assert [o.graph.stage for o in outs] == [1, 2, 3, 4]
    for o in outs:
        assert o.features.shape == (o.graph.num_nodes, 8)

    # odd sizes round up at every level
    g = make_graph(rng, [13])
    outs = backbone_forward(params, cfg, g)
    assert [o.graph.num_nodes for o in outs] == [13, 7, 4, 2]


def test_ceil_halving_per_video_in_batches():
    rng = np.random.default_rng(1)
    cfg = BackboneConfig(d_in=6, d_model=8, num_stages=3)
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [9, 6, 5])
    outs = backbone_forward(params, cfg, g)
    for o, expected in zip(outs, [[9, 6, 5], [5, 3, 3], [3, 2, 2]]):
        counts = np.diff(o.graph.video_boundaries).tolist()
        assert counts == expected


def test_positions_stay_in_seconds_and_window_doubles():
    rng = np.random.default_rng(2)
    cfg = BackboneConfig(d_in=6, d_model=8, num_stages=3, threshold_s=1.5)
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [16], spacing=1.0, window=1.5)
    outs = backbone_forward(params, cfg, g)
    # survivors keep their original timestamps, never rescaled
    assert np.array_equal(outs[1].graph.positions_s, np.arange(0.0, 16.0, 2.0))
    assert np.array_equal(outs[2].graph.positions_s, np.arange(0.0, 16.0, 4.0))
    # stage l window is threshold * 2^(l-1): brute-check stage edges
    for o in outs:
        window = 1.5 * 2.0 ** (o.graph.stage - 1)
        pos = o.graph.positions_s
        expected = sorted(
            (i, j)
            for i in range(len(pos))
            for j in range(len(pos))
            if i != j and abs(pos[i] - pos[j]) < window
        )
        assert sorted(map(tuple, o.graph.edges.tolist())) == expected
        assert len(o.graph.edges) > 0


def test_backbone_rejects_coarse_input_graph():
    rng = np.random.default_rng(3)
    cfg = BackboneConfig(d_in=6, d_model=8, num_stages=2)
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [8])
    g.stage = 2
    with pytest.raises(ValueError):
        backbone_forward(params, cfg, g)


def test_first_layer_maps_d_in_rest_d_model():
    rng = np.random.default_rng(4)
    cfg = BackboneConfig(d_in=5, d_model=9, num_stages=2, layers_per_stage=2)
    params = BackboneParams.init(rng, cfg)
    assert params.stages[0][0].w_root.shape == (5, 9)
    assert params.stages[0][1].w_root.shape == (9, 9)
    assert params.stages[1][0].w_root.shape == (9, 9)
    assert len(params.params()) == sum(
        len(lp.params()) for block in params.stages for lp in block
    )


# ---------------------------------------------------------------------------
# closed-neighborhood pooling
# ---------------------------------------------------------------------------


def test_pool_closed_neighborhood_mean_oracle():
    rng = np.random.default_rng(5)
    g = make_graph(rng, [6], window=1.5)
    x = Tensor(g.features)
    pooled = pool_closed_neighborhood(x, g, "mean").data
    for i in range(6):
        members = sorted(set(g.edges[g.edges[:, 0] == i, 1]) | {i})
        assert np.allclose(pooled[i], g.features[members].mean(axis=0), atol=1e-12)


def test_pool_closed_neighborhood_max_oracle():
    rng = np.random.default_rng(6)
    g = make_graph(rng, [6], window=1.5)
    pooled = pool_closed_neighborhood(Tensor(g.features), g, "max").data
    for i in range(6):
        members = sorted(set(g.edges[g.edges[:, 0] == i, 1]) | {i})
        assert np.array_equal(pooled[i], g.features[members].max(axis=0))


def test_pool_isolated_node_keeps_own_features():
    feats = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = build_graph(feats, np.array([0.0, 100.0]), rule=EdgeRule(threshold_s=1.0))
    for how in ("mean", "max"):
        pooled = pool_closed_neighborhood(Tensor(feats), g, how).data
        assert np.array_equal(pooled, feats)


def test_pool_rejects_unknown_mode():
    g = build_graph(np.zeros((2, 2)), np.arange(2.0))
    with pytest.raises(ValueError):
        pool_closed_neighborhood(Tensor(g.features), g, "sum")


def test_skip_pooling_copies_survivor_features():
    rng = np.random.default_rng(7)
    cfg = BackboneConfig(d_in=4, d_model=4, num_stages=2, layers_per_stage=1,
                         pooling="video-ss")
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [8], d=4)
    outs = backbone_forward(params, cfg, g)
    # stage 2 input nodes are stage-1 outputs at even indices, unpooled
    stage1 = outs[0].features.data
    kind = cfg.kind
    expected_in = stage1[[0, 2, 4, 6]]
    got = kind.forward(params.stages[1][0], outs[1].graph, Tensor(expected_in)).data
    assert np.allclose(outs[1].features.data, got, atol=1e-12)


# ---------------------------------------------------------------------------
# time-encoding variant
# ---------------------------------------------------------------------------


def test_sage_pe_adds_encoding_each_stage():
    rng = np.random.default_rng(8)
    cfg_pe = BackboneConfig(layer_kind="sage-pe", d_in=6, d_model=6,
                            num_stages=1, layers_per_stage=1)
    cfg_plain = BackboneConfig(layer_kind="sage", d_in=6, d_model=6,
                               num_stages=1, layers_per_stage=1)
    params = BackboneParams.init(np.random.default_rng(9), cfg_pe)
    g = make_graph(rng, [5], d=6)
    out_pe = backbone_forward(params, cfg_pe, g)[0].features.data
    out_plain = backbone_forward(params, cfg_plain, g)[0].features.data
    shifted = g.features + sinusoidal_pe(g.positions_s, 6)
    g_shifted = build_graph(shifted, g.positions_s, g.video_boundaries)
    expected = backbone_forward(params, cfg_plain, g_shifted)[0].features.data
    assert np.allclose(out_pe, expected, atol=1e-12)
    assert not np.allclose(out_pe, out_plain, atol=1e-6)


# ---------------------------------------------------------------------------
# differentiability end to end
# ---------------------------------------------------------------------------


def test_gradient_flows_through_all_stages():
    rng = np.random.default_rng(10)
    cfg = BackboneConfig(d_in=4, d_model=5, num_stages=3, layers_per_stage=1)
    params = BackboneParams.init(rng, cfg)
    g = make_graph(rng, [10, 7], d=4)
    with GradientTape() as tape:
        outs = backbone_forward(params, cfg, g)
        loss = tsum(outs[-1].features)
    grads = backward(tape, loss, leaves=params.params())
    # the stage-1 block feeds the coarse stages, so its weights get signal
    first = params.stages[0][0]
    assert np.max(np.abs(grads[first.w_root])) > 0.0
    assert all(g.shape == p.shape for p, g in grads.items())


def test_backbone_gradients_finite_difference_mean_and_max():
    rng = np.random.default_rng(11)
    for pooling in ("mean", "max"):
        cfg = BackboneConfig(d_in=3, d_model=4, num_stages=2,
                             layers_per_stage=1, pooling=pooling)
        params = BackboneParams.init(np.random.default_rng(12), cfg)
        g = make_graph(rng, [7], d=3)
        weights = Tensor(rng.normal(size=(4, 4)))

        def build_loss():
            outs = backbone_forward(params, cfg, g)
            return tsum(outs[-1].features * weights)

        worst = finite_diff_check(build_loss, params.params(), rel_tol=1e-5)
        assert worst < 1e-5, f"{pooling}: {worst}"
