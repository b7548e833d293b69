"""Command-line harness.

Subcommands cover the full experiment lifecycle:

  gen-data          write a synthetic corpus to disk
  train-single      train one task from scratch
  train-mtl         train several tasks with a shared backbone
  build-prototypes  summarize a trained model into prototype banks
  train-novel       train a novel task (egopack / mtl-ft / mtl-ht /
                    single / translation)
  ablate            ordering-probe and grid ablations
  eval              re-evaluate a saved run
  report            aggregate several runs into one summary

Every run directory receives ``config.json`` (the resolved experiment
config) and ``metrics.json`` (sorted keys, no timestamps, so reruns with
the same inputs are byte-identical); analytics land in ``tables/*.csv``
and banks in ``prototypes/``. The ``TGK_THREADS`` environment variable
caps the numerics thread pool.
"""

from __future__ import annotations

import argparse
import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import (
    OrderProbeConfig, run_ablation_grid, run_order_separation,
    run_tdgc_ablations,
)
from .config import (
    BackboneSettings, ExperimentConfig, resolve_backbone, save_config,
    validate_config,
)
from .egopack import activation_consensus, activation_histogram, knn_match
from .persist import (
    load_multitask, load_novel, load_translation, save_multitask,
    save_novel, save_translation,
)
from .synth import (
    SynthConfig, SynthDataset, generate_dataset, load_dataset, save_dataset,
)
from .tasks import neck_forward
from .training import (
    DENSE_STAGE, TrainConfig, build_batch_graph, build_prototype_banks,
    evaluate, run_mtl, run_novel, run_single, run_translation,
)

__all__ = ["main"]

NOVEL_METHODS = ("egopack", "mtl-ft", "mtl-ht", "single", "translation")


def _write_metrics(run_dir: Path, payload: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "metrics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_table(run_dir: Path, name: str, header: list[str],
                 rows: list) -> None:
    tables = run_dir / "tables"
    tables.mkdir(parents=True, exist_ok=True)
    with open(tables / f"{name}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layer-kind", default="tdgc")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--base-lr", type=float, default=1e-4)
    p.add_argument("--task-lr", action="append", default=[],
                   metavar="TASK=LR", help="per-task lr override, repeatable")
    p.add_argument("--batch-videos", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pooling", default="mean")
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--layers-per-stage", type=int, default=2)
    p.add_argument("--gate-hidden", type=int, default=None)
    p.add_argument("--disable-sign", action="store_true")
    p.add_argument("--disable-gate", action="store_true")
    p.add_argument("--knn-k", type=int, default=8)
    p.add_argument("--interaction-layers", type=int, default=2)
    p.add_argument("--no-rematch", action="store_true")
    p.add_argument("--mq-min-score", type=float, default=0.05)
    p.add_argument("--candidates", type=int, default=5)


def _train_config(args) -> TrainConfig:
    task_lr = {"oscc": 1e-5, "pnr": 1e-5}
    for item in args.task_lr:
        name, _, value = item.partition("=")
        task_lr[name] = float(value)
    return TrainConfig(
        epochs=args.epochs, warmup_epochs=args.warmup, base_lr=args.base_lr,
        task_lr=task_lr, batch_videos=args.batch_videos, seed=args.seed,
        knn_k=args.knn_k, interaction_layers=args.interaction_layers,
        rematch=not args.no_rematch, mq_min_score=args.mq_min_score,
        num_candidates=args.candidates,
    )


def _backbone_settings(args) -> BackboneSettings:
    return BackboneSettings(
        layer_kind=args.layer_kind, layers_per_stage=args.layers_per_stage,
        threshold_s=args.threshold, pooling=args.pooling,
        gate_hidden=args.gate_hidden, disable_sign=args.disable_sign,
        disable_gate=args.disable_gate,
    )


def _experiment_config(args, data_cfg: SynthConfig, tasks) -> ExperimentConfig:
    cfg = ExperimentConfig(data=data_cfg, train=_train_config(args),
                           backbone=_backbone_settings(args),
                           tasks=tuple(tasks))
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    cfg = SynthConfig(
        num_train_videos=args.train_videos, num_val_videos=args.val_videos,
        segments_per_video=args.segments, dim=args.dim,
        num_verbs=args.verbs, num_nouns=args.nouns, noise=args.noise,
        segment_s=args.segment_seconds, event_len_lo=args.event_len_lo,
        event_len_hi=args.event_len_hi, lta_steps=args.lta_steps,
        two_phase=not args.flat, verb_follow=args.verb_follow,
        noun_repeat=args.noun_repeat, seed=args.seed,
    )
    ds = generate_dataset(cfg)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds.train)} train / {len(ds.val)} val videos to {args.out}")
    return 0


def _cmd_train_single(args) -> int:
    ds = load_dataset(args.data)
    cfg = _experiment_config(args, ds.config, [args.task])
    run_dir = Path(args.run)
    save_config(run_dir, cfg)
    model = run_single(args.task, ds, cfg.train,
                       backbone_cfg=resolve_backbone(cfg))
    save_multitask(run_dir, model)
    metrics = evaluate(model, ds.val, cfg.train)
    _write_metrics(run_dir, {"arm": "single", "task": args.task,
                             "metrics": metrics})
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_train_mtl(args) -> int:
    ds = load_dataset(args.data)
    tasks = sorted(args.tasks.split(","))
    cfg = _experiment_config(args, ds.config, tasks)
    run_dir = Path(args.run)
    save_config(run_dir, cfg)
    model = run_mtl(tasks, ds, cfg.train, backbone_cfg=resolve_backbone(cfg))
    save_multitask(run_dir, model)
    metrics = evaluate(model, ds.val, cfg.train)
    _write_metrics(run_dir, {"arm": "mtl", "tasks": tasks, "metrics": metrics})
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_build_prototypes(args) -> int:
    ds = load_dataset(args.data)
    model = load_multitask(args.support_run)
    support_tasks = sorted(args.tasks.split(",")) if args.tasks else model.tasks
    banks = build_prototype_banks(model, ds, support_tasks)
    run_dir = Path(args.run)
    run_dir.mkdir(parents=True, exist_ok=True)
    from .egopack import save_bank
    for bank in banks.values():
        save_bank(run_dir / "prototypes", bank)

    # analytics on validation-split node features
    matches = {}
    for task in support_tasks:
        rows = []
        for video in ds.val:
            graph = build_batch_graph([video], model.backbone_cfg.edge_rule)
            stages = model.forward_backbone(graph)
            necked = neck_forward(model.branches[task].neck,
                                  stages[DENSE_STAGE].features)
            rows.append(necked.data)
        matches[task] = knn_match(np.concatenate(rows, axis=0),
                                  banks[task], args.knn_k)
        hist = activation_histogram(matches[task], banks[task])
        _write_table(run_dir, f"activation_histogram_{task}",
                     ["label", "frequency"], hist)
    consensus = activation_consensus(matches, banks)
    _write_table(run_dir, "activation_consensus",
                 ["task_a", "task_b", "consensus"],
                 [(a, b, f"{c:.6f}") for a, b, c in consensus])
    _write_metrics(run_dir, {
        "arm": "prototypes",
        "banks": {t: {"num_prototypes": banks[t].size, "dim": banks[t].dim}
                  for t in sorted(banks)},
    })
    print(f"built {len(banks)} banks into {run_dir}")
    return 0


def _cmd_train_novel(args) -> int:
    ds = load_dataset(args.data)
    cfg = _experiment_config(args, ds.config, [args.task])
    run_dir = Path(args.run)
    save_config(run_dir, cfg)

    novel_ds = ds
    if args.novel_videos is not None:
        novel_ds = SynthDataset(ds.config, ds.train[:args.novel_videos], ds.val)

    if args.method == "single":
        model = run_single(args.task, novel_ds, cfg.train,
                           backbone_cfg=resolve_backbone(cfg))
        save_multitask(run_dir, model)
        metrics = evaluate(model, ds.val, cfg.train)
    elif args.method == "translation":
        support_tasks = sorted(args.support_tasks.split(","))
        support_models = {}
        for t in support_tasks:
            sub = replace(cfg.train, seed=cfg.train.seed)
            support_models[t] = run_single(t, ds, sub)
        model, tm = run_translation(args.task, novel_ds, cfg.train,
                                    support_models)
        save_translation(run_dir, model, tm)
        metrics = evaluate(model, ds.val, cfg.train, translation=tm)
    else:
        if not args.support_run:
            raise SystemExit(f"--support-run is required for {args.method}")
        support = load_multitask(args.support_run)
        banks = None
        interaction = args.method == "egopack"
        if interaction:
            if not args.banks:
                raise SystemExit("--banks is required for egopack")
            from .egopack import load_bank
            banks = {t: load_bank(Path(args.banks) / "prototypes", t)
                     for t in support.tasks}
        model, novel = run_novel(
            args.task, novel_ds, cfg.train, support, banks=banks,
            interaction=interaction,
            freeze_backbone=(args.method == "mtl-ht"))
        save_novel(run_dir, model, novel)
        metrics = evaluate(model, ds.val, cfg.train, novel=novel)

    _write_metrics(run_dir, {"arm": args.method, "task": args.task,
                             "metrics": metrics})
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    run_dir = Path(args.out)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.mode == "order":
        probe = OrderProbeConfig(num_windows=args.windows, noise=args.noise,
                                 epochs=args.epochs,
                                 warmup_epochs=min(5, args.epochs - 1))
        kinds = args.kinds.split(",")
        separation = run_order_separation(kinds, seeds, probe)
        ablations = run_tdgc_ablations(seeds, probe)
        rows = [(k, f"{v['mean']:.2f}",
                 " ".join(f"{a:.2f}" for a in v["per_seed"].values()))
                for k, v in separation.items()]
        _write_table(run_dir, "order_separation",
                     ["layer_kind", "mean_val_acc", "per_seed"], rows)
        rows = [(k, f"{v['mean']:.2f}",
                 " ".join(f"{a:.2f}" for a in v["per_seed"].values()))
                for k, v in ablations.items()]
        _write_table(run_dir, "tdgc_ablations",
                     ["variant", "mean_val_acc", "per_seed"], rows)
        _write_metrics(run_dir, {"arm": "ablate-order",
                                 "separation": separation,
                                 "ablations": ablations})
    else:
        data_cfg = SynthConfig(num_train_videos=args.train_videos,
                               num_val_videos=args.val_videos,
                               segments_per_video=args.segments,
                               noise=args.noise, seed=seeds[0])
        train_cfg = TrainConfig(epochs=args.epochs,
                                warmup_epochs=min(3, args.epochs - 1),
                                seed=seeds[0])
        records = run_ablation_grid(
            data_cfg, train_cfg, layer_kinds=args.kinds.split(","),
            poolings=args.poolings.split(","),
            thresholds=[float(t) for t in args.thresholds.split(",")],
            seeds=seeds)
        _write_table(run_dir, "ablation_grid",
                     ["layer_kind", "pooling", "threshold_s", "map_avg"],
                     [(r["layer_kind"], r["pooling"], r["threshold_s"],
                       f"{r['map_avg']:.3f}") for r in records])
        _write_metrics(run_dir, {"arm": "ablate-grid", "records": records})
    print(f"ablation results in {run_dir}")
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    run_dir = Path(args.run)
    meta = json.loads((run_dir / "model_meta.json").read_text())
    from .config import load_config
    cfg = load_config(run_dir)
    if meta["arm"] == "multitask":
        model = load_multitask(run_dir)
        metrics = evaluate(model, ds.split(args.split), cfg.train)
    elif meta["arm"] == "novel":
        model, novel = load_novel(run_dir, cfg.train)
        metrics = evaluate(model, ds.split(args.split), cfg.train, novel=novel)
    elif meta["arm"] == "translation":
        model, tm = load_translation(run_dir)
        metrics = evaluate(model, ds.split(args.split), cfg.train,
                           translation=tm)
    else:
        raise SystemExit(f"cannot evaluate arm {meta['arm']!r}")
    out_dir = Path(args.out) if args.out else run_dir
    _write_metrics(out_dir, {"arm": meta["arm"], "metrics": metrics,
                             "split": args.split})
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    out_dir = Path(args.out)
    merged = {}
    rows = []
    for run in args.runs:
        run_dir = Path(run)
        payload = json.loads((run_dir / "metrics.json").read_text())
        merged[run_dir.name] = payload
        metrics = payload.get("metrics", {})
        for task in sorted(metrics):
            for key in sorted(metrics[task]):
                rows.append((run_dir.name, task, key,
                             f"{metrics[task][key]:.6f}"))
    _write_table(out_dir, "summary", ["run", "task", "metric", "value"], rows)
    _write_metrics(out_dir, {"arm": "report", "runs": merged})
    print(f"report across {len(args.runs)} runs in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgk", description="temporal-graph toolkit harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train-videos", type=int, default=200)
    p.add_argument("--val-videos", type=int, default=50)
    p.add_argument("--segments", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--verbs", type=int, default=8)
    p.add_argument("--nouns", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--segment-seconds", type=float, default=1.0)
    p.add_argument("--event-len-lo", type=int, default=2)
    p.add_argument("--event-len-hi", type=int, default=6)
    p.add_argument("--lta-steps", type=int, default=8)
    p.add_argument("--flat", action="store_true",
                   help="single-phase emission inside events")
    p.add_argument("--verb-follow", type=float, default=0.7,
                   help="chance the next verb is the cyclic successor")
    p.add_argument("--noun-repeat", type=float, default=0.5,
                   help="chance the next event keeps its noun")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-single", help="train one task from scratch")
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--run", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train_single)

    p = sub.add_parser("train-mtl", help="shared-backbone multi-task training")
    p.add_argument("--data", required=True)
    p.add_argument("--tasks", required=True, help="comma-separated task names")
    p.add_argument("--run", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train_mtl)

    p = sub.add_parser("build-prototypes",
                       help="freeze a trained model into prototype banks")
    p.add_argument("--data", required=True)
    p.add_argument("--support-run", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--tasks", default=None)
    p.add_argument("--knn-k", type=int, default=8)
    p.set_defaults(func=_cmd_build_prototypes)

    p = sub.add_parser("train-novel", help="train a novel task arm")
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--method", choices=NOVEL_METHODS, default="egopack")
    p.add_argument("--support-run", default=None)
    p.add_argument("--banks", default=None)
    p.add_argument("--support-tasks", default="ar,oscc,pnr",
                   help="tasks for the translation arm's token providers")
    p.add_argument("--novel-videos", type=int, default=None,
                   help="restrict the novel phase to the first N train videos")
    p.add_argument("--run", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train_novel)

    p = sub.add_parser("ablate", help="ordering probe or detection grid")
    p.add_argument("--mode", choices=("order", "grid"), default="order")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--kinds", default="tdgc,sgcn,sage-pe,sage,gcn,gat")
    p.add_argument("--windows", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--poolings", default="mean")
    p.add_argument("--thresholds", default="2.0")
    p.add_argument("--train-videos", type=int, default=60)
    p.add_argument("--val-videos", type=int, default=20)
    p.add_argument("--segments", type=int, default=32)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="re-evaluate a saved run")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="aggregate metrics across runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
