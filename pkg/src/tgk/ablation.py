"""Experiment recipes: the ordering probe, layer ablations, pyramid
comparisons, and transfer-arm matchups.

The ordering probe is the controlled experiment at the heart of the layer
comparison: fixed-size two-event windows whose label is the event order.
Its data distribution is mirror-symmetric, so accuracy above chance
requires the layer to carry temporal direction; layers that only see
neighbor multisets are pinned to 50% no matter how long they train.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    GradientTape, Tensor, backward, cross_entropy_rows, segment_mean,
)
from .graph import EdgeRule, build_graph
from .hierarchy import BackboneConfig, BackboneParams, backbone_forward
from .optim import Adam, lr_at
from .synth import SynthConfig, SynthDataset, generate_dataset, generate_order_windows
from .tasks import ClassifierParams, classifier_forward
from .training import (
    TrainConfig, build_prototype_banks, evaluate, run_mtl, run_novel,
    run_single,
)

__all__ = [
    "OrderProbeConfig", "train_order_probe", "run_order_separation",
    "run_tdgc_ablations", "run_pyramid_comparison", "run_transfer_matchup",
    "run_ablation_grid",
]


@dataclass(frozen=True)
class OrderProbeConfig:
    """Settings for one ordering-probe run."""

    num_windows: int = 2000
    train_fraction: float = 0.8
    noise: float = 0.1
    dim: int = 32
    window_segments: int = 8
    epochs: int = 30
    warmup_epochs: int = 5
    lr: float = 3e-3
    batch_windows: int = 64
    threshold_s: float = 2.0


def _window_batch_graph(feats: np.ndarray, positions: np.ndarray,
                        rule: EdgeRule):
    """Stack windows into one graph, each window its own video."""
    w, s, d = feats.shape
    flat = feats.reshape(w * s, d)
    pos = np.tile(positions, w)
    bounds = np.arange(0, (w + 1) * s, s)
    return build_graph(flat, pos, bounds, rule=rule, stage=1)


def train_order_probe(layer_kind: str, seed: int,
                      probe: OrderProbeConfig = OrderProbeConfig(),
                      disable_sign: bool = False,
                      disable_gate: bool = False) -> dict:
    """Train one layer family on the ordering probe; returns accuracies.

    The model is one backbone stage (two layers) followed by per-window
    mean pooling and a small classifier. Data, split, and init all derive
    from ``seed``.
    """
    rng = np.random.default_rng(seed)
    feats, positions, labels = generate_order_windows(
        probe.num_windows, probe.noise, rng, dim=probe.dim,
        window_segments=probe.window_segments)
    n_train = int(probe.num_windows * probe.train_fraction)
    train_f, val_f = feats[:n_train], feats[n_train:]
    train_y, val_y = labels[:n_train], labels[n_train:]

    cfg = BackboneConfig(layer_kind=layer_kind, d_in=probe.dim,
                         d_model=probe.dim, num_stages=1,
                         threshold_s=probe.threshold_s,
                         disable_sign=disable_sign, disable_gate=disable_gate)
    params = BackboneParams.init(rng, cfg)
    readout = ClassifierParams.init(rng, probe.dim, 2)
    trainable = params.params() + readout.params()
    opt = Adam(trainable, probe.lr)

    def window_logits(batch_feats: np.ndarray) -> Tensor:
        g = _window_batch_graph(batch_feats, positions, cfg.edge_rule)
        out = backbone_forward(params, cfg, g)[0]
        pooled = segment_mean(out.features, g.video_of(), batch_feats.shape[0])
        return classifier_forward(readout, pooled)

    for epoch in range(probe.epochs):
        opt.set_lr(lr_at(epoch, probe.lr, probe.warmup_epochs, probe.epochs))
        order = rng.permutation(n_train)
        for lo in range(0, n_train, probe.batch_windows):
            sel = order[lo:lo + probe.batch_windows]
            with GradientTape() as tape:
                loss = cross_entropy_rows(window_logits(train_f[sel]),
                                          train_y[sel])
            backward(tape, loss, leaves=trainable)
            opt.step()
            opt.zero_grad()

    def accuracy(f, y):
        preds = window_logits(f).data.argmax(axis=1)
        return 100.0 * float((preds == y).mean())

    return {"train_acc": accuracy(train_f, train_y),
            "val_acc": accuracy(val_f, val_y)}


def run_order_separation(layer_kinds, seeds,
                         probe: OrderProbeConfig = OrderProbeConfig()) -> dict:
    """Probe accuracy per layer kind per seed, plus seed means."""
    out: dict = {}
    for kind in layer_kinds:
        per_seed = {s: train_order_probe(kind, s, probe)["val_acc"]
                    for s in seeds}
        out[kind] = {"per_seed": per_seed,
                     "mean": float(np.mean(list(per_seed.values())))}
    return out


def run_tdgc_ablations(seeds, probe: OrderProbeConfig = OrderProbeConfig()
                       ) -> dict:
    """Ordering-probe accuracy with each temporal modulation removed."""
    variants = {"full": {}, "no_sign": {"disable_sign": True},
                "no_gate": {"disable_gate": True}}
    out = {}
    for name, flags in variants.items():
        per_seed = {s: train_order_probe("tdgc", s, probe, **flags)["val_acc"]
                    for s in seeds}
        out[name] = {"per_seed": per_seed,
                     "mean": float(np.mean(list(per_seed.values())))}
    return out


def run_pyramid_comparison(layer_kinds, seeds, data_cfg: SynthConfig,
                           train_cfg: TrainConfig) -> dict:
    """Detection quality per layer kind on the same corpora.

    Trains a single-task detection model per (kind, seed) and reports the
    averaged mAP. The caller's ``data_cfg`` decides the emission profile;
    each seed regenerates its corpus so kinds compare on identical data.
    """
    out: dict = {}
    for kind in layer_kinds:
        per_seed = {}
        for seed in seeds:
            ds = generate_dataset(replace(data_cfg, seed=seed))
            cfg = replace(train_cfg, seed=seed)
            model = run_single("mq", ds, cfg, backbone_cfg=BackboneConfig(
                layer_kind=kind, d_in=data_cfg.dim, d_model=data_cfg.dim,
                num_stages=4))
            result = evaluate(model, ds.val, cfg)
            per_seed[seed] = result["mq"]["map_avg"]
        out[kind] = {"per_seed": per_seed,
                     "mean": float(np.mean(list(per_seed.values())))}
    return out


def run_transfer_matchup(novel_task: str, ds: SynthDataset,
                         cfg: TrainConfig, support_tasks=("ar", "oscc", "pnr"),
                         novel_train_videos: int | None = None) -> dict:
    """One seed of the transfer experiment: egopack vs its baselines.

    The support phase sees the full training split; the novel phase is
    restricted to its first ``novel_train_videos`` videos (data-poor novel
    task). Returns each arm's novel-task validation metrics.
    """
    support = run_mtl(support_tasks, ds, cfg)
    banks = build_prototype_banks(support, ds, support_tasks)

    novel_ds = ds
    if novel_train_videos is not None:
        novel_ds = SynthDataset(ds.config, ds.train[:novel_train_videos], ds.val)

    single = run_single(novel_task, novel_ds, cfg)
    ft_model, ft_state = run_novel(novel_task, novel_ds, cfg, support,
                                   banks=None, interaction=False)
    ego_model, ego_state = run_novel(novel_task, novel_ds, cfg, support,
                                     banks=banks, interaction=True)
    return {
        "single": evaluate(single, ds.val, cfg)[novel_task],
        "mtl_ft": evaluate(ft_model, ds.val, cfg, novel=ft_state)[novel_task],
        "egopack": evaluate(ego_model, ds.val, cfg, novel=ego_state)[novel_task],
    }


def run_ablation_grid(data_cfg: SynthConfig, train_cfg: TrainConfig,
                      layer_kinds=("tdgc", "sgcn", "sage-pe", "sage", "gcn", "gat"),
                      poolings=("mean",), thresholds=(2.0,),
                      seeds=(0,)) -> list[dict]:
    """Grid of detection runs over layer kind, pooling, and threshold.

    Returns one record per cell with the averaged mAP; the command-line
    harness turns these into tables.
    """
    records = []
    for kind in layer_kinds:
        for pooling in poolings:
            for thr in thresholds:
                per_seed = []
                for seed in seeds:
                    ds = generate_dataset(replace(data_cfg, seed=seed))
                    cfg = replace(train_cfg, seed=seed)
                    model = run_single("mq", ds, cfg, backbone_cfg=BackboneConfig(
                        layer_kind=kind, d_in=data_cfg.dim,
                        d_model=data_cfg.dim, num_stages=4,
                        pooling=pooling, threshold_s=thr))
                    result = evaluate(model, ds.val, cfg)
                    per_seed.append(result["mq"]["map_avg"])
                records.append({
                    "layer_kind": kind, "pooling": pooling,
                    "threshold_s": thr,
                    "map_avg": float(np.mean(per_seed)),
                    "num_seeds": len(seeds),
                })
    return records
