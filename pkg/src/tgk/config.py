"""Experiment configuration: one JSON-serializable record per run.

Every command-line run resolves its settings into an ``ExperimentConfig``
and writes it as ``config.json`` in the run directory, so a run is fully
reproducible from its directory alone. Validation happens eagerly at
construction time with named errors instead of failures mid-training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .hierarchy import BackboneConfig
from .layers import LAYER_KINDS
from .synth import SynthConfig, TASK_NAMES
from .training import TrainConfig, stage_count_for

__all__ = ["BackboneSettings", "ExperimentConfig", "validate_config",
           "load_config", "save_config", "resolve_backbone"]

POOLINGS = ("mean", "max", "video-ss", "batch-ss")
FUSIONS = ("features",)


@dataclass(frozen=True)
class BackboneSettings:
    """User-settable backbone knobs; dimensions come from the data config."""

    layer_kind: str = "tdgc"
    layers_per_stage: int = 2
    threshold_s: float = 2.0
    pooling: str = "mean"
    gate_hidden: int | None = None
    disable_sign: bool = False
    disable_gate: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneSettings = field(default_factory=BackboneSettings)
    tasks: tuple = ("ar",)

    def to_json(self) -> str:
        payload = {
            "data": asdict(self.data),
            "train": asdict(self.train),
            "backbone": asdict(self.backbone),
            "tasks": list(self.tasks),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        cfg = cls(
            data=SynthConfig(**raw["data"]),
            train=TrainConfig(**raw["train"]),
            backbone=BackboneSettings(**raw["backbone"]),
            tasks=tuple(raw["tasks"]),
        )
        validate_config(cfg)
        return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise ValueError naming the first invalid field."""
    if cfg.backbone.layer_kind not in LAYER_KINDS:
        raise ValueError(f"backbone.layer_kind: unknown kind "
                         f"{cfg.backbone.layer_kind!r}; "
                         f"choose from {sorted(LAYER_KINDS)}")
    if cfg.backbone.pooling not in POOLINGS:
        raise ValueError(f"backbone.pooling: unknown pooling "
                         f"{cfg.backbone.pooling!r}; choose from {POOLINGS}")
    if cfg.backbone.threshold_s <= 0:
        raise ValueError("backbone.threshold_s: must be positive")
    if cfg.backbone.layers_per_stage < 1:
        raise ValueError("backbone.layers_per_stage: must be >= 1")
    for t in cfg.tasks:
        if t not in TASK_NAMES:
            raise ValueError(f"tasks: unknown task {t!r}; "
                             f"choose from {TASK_NAMES}")
    if not cfg.tasks:
        raise ValueError("tasks: at least one task required")
    if cfg.data.dim % 2:
        raise ValueError("data.dim: must be even (time encodings pair up "
                         "sin/cos channels)")
    if cfg.data.dim < 2 or cfg.data.num_verbs < 2 or cfg.data.num_nouns < 1:
        raise ValueError("data: dim >= 2, num_verbs >= 2, num_nouns >= 1 required")
    if cfg.data.event_len_lo < 1 or cfg.data.event_len_hi < cfg.data.event_len_lo:
        raise ValueError("data: event length range must satisfy "
                         "1 <= lo <= hi")
    for prob_field in ("verb_follow", "noun_repeat"):
        p = getattr(cfg.data, prob_field)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"data.{prob_field}: must lie in [0, 1]")
    if cfg.train.epochs <= cfg.train.warmup_epochs:
        raise ValueError("train.epochs: must exceed train.warmup_epochs")
    if cfg.train.batch_videos < 1:
        raise ValueError("train.batch_videos: must be >= 1")
    if cfg.train.base_lr <= 0:
        raise ValueError("train.base_lr: must be positive")
    if cfg.train.knn_k < 1:
        raise ValueError("train.knn_k: must be >= 1")
    if cfg.train.fusion not in FUSIONS:
        raise ValueError(f"train.fusion: unknown mode {cfg.train.fusion!r}")
    if cfg.train.num_candidates < 1:
        raise ValueError("train.num_candidates: must be >= 1")


def resolve_backbone(cfg: ExperimentConfig, tasks=None) -> BackboneConfig:
    """Concrete backbone layout for a task set under this config."""
    tasks = list(tasks if tasks is not None else cfg.tasks)
    return BackboneConfig(
        layer_kind=cfg.backbone.layer_kind,
        d_in=cfg.data.dim,
        d_model=cfg.data.dim,
        num_stages=stage_count_for(tasks),
        layers_per_stage=cfg.backbone.layers_per_stage,
        threshold_s=cfg.backbone.threshold_s,
        pooling=cfg.backbone.pooling,
        gate_hidden=cfg.backbone.gate_hidden,
        disable_sign=cfg.backbone.disable_sign,
        disable_gate=cfg.backbone.disable_gate,
    )


def save_config(run_dir: str | Path, cfg: ExperimentConfig) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if path.is_dir():
        path = path / "config.json"
    return ExperimentConfig.from_json(path.read_text())
