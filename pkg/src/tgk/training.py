"""Training phases and baseline arms over the synthetic corpus.

Phase one trains a shared backbone with hard parameter sharing: every
task keeps its own neck and head, losses are summed unweighted, and each
task group can run at its own learning rate (separate optimizer instances
over one tape). Phase two freezes the phase-one model into prototype
banks and trains a novel task that queries them through interaction
layers, with gradients into the backbone blocked along the support
branches.

Baseline arms reuse the same machinery:
  - single:      fresh backbone, novel task only;
  - mtl-ft:      phase-two path with interaction disabled (backbone warm
                 start, full fine-tune) - literally the same function;
  - mtl-ht:      same with the backbone frozen (head tuning);
  - egopack:     phase-two path with interaction enabled;
  - translation: frozen single-task support models emit tokens, a masked
                 encoder translates them for the novel head.

Annotation access goes through ``AnnotationView`` which enforces the
phase contract: phase two may only read the novel task's annotations.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    GradientTape, Tensor, add, backward, concat_rows, cross_entropy_rows,
    gather_rows, mul, sub, take_cols, transpose,
)
from .egopack import (
    InteractionParams, PrototypeBank, build_prototypes, fuse_features,
    interaction_forward, knn_match,
)
from .graph import EdgeRule, TemporalGraph, build_graph
from .hierarchy import BackboneConfig, BackboneParams, StageOutput, backbone_forward
from .metrics import (
    edit_distance, localization_error, map_at_iou, recall_at_k, soft_nms,
    top1_accuracy,
)
from .optim import Adam, lr_at
from .synth import (
    SynthDataset, VideoSample, ar_annotations, lta_annotations,
    lta_train_instances,
    mq_annotations, oscc_annotations, pnr_annotations,
)
from .tasks import (
    ClassifierParams, LtaParams, MqParams, NeckParams, ScorerParams,
    align_video_intervals, bce_with_logits, classifier_forward, diou_loss,
    focal_loss, lta_candidates, lta_forward, mq_decode, mq_forward,
    mq_targets, neck_forward, scorer_forward,
)
from .translation import TranslationParams, translation_forward

__all__ = [
    "TrainConfig", "WorldInfo", "AnnotationView", "TaskBranch",
    "MultiTaskModel", "build_batch_graph", "run_single", "run_mtl",
    "build_prototype_banks", "run_novel", "run_translation", "evaluate",
]

DENSE_STAGE = 0  # stage index consumed by per-segment tasks


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by all arms."""

    epochs: int = 15
    warmup_epochs: int = 5
    base_lr: float = 1e-4
    task_lr: dict = field(default_factory=lambda: {"oscc": 1e-5, "pnr": 1e-5})
    batch_videos: int = 8
    seed: int = 0
    knn_k: int = 8
    interaction_layers: int = 2
    rematch: bool = True
    fusion: str = "features"
    mq_min_score: float = 0.05
    num_candidates: int = 5

    def lr_for(self, task: str) -> float:
        return float(self.task_lr.get(task, self.base_lr))


@dataclass(frozen=True)
class WorldInfo:
    """Label-space facts the models need from the dataset."""

    dim: int
    num_verbs: int
    num_nouns: int
    lta_steps: int

    @classmethod
    def from_dataset(cls, ds: SynthDataset) -> "WorldInfo":
        return cls(dim=ds.config.dim, num_verbs=ds.config.num_verbs,
                   num_nouns=ds.config.num_nouns, lta_steps=ds.config.lta_steps)

    @property
    def mq_classes(self) -> int:
        return self.num_verbs


class AnnotationView:
    """Gatekeeper for annotation reads.

    Each training phase constructs a view naming the tasks it is allowed
    to touch; reading any other task's annotations raises PermissionError.
    This is what keeps phase-two training honest about never seeing
    support-task supervision.
    """

    def __init__(self, allowed_tasks, lta_steps: int):
        self.allowed = frozenset(allowed_tasks)
        self.lta_steps = lta_steps

    def annotations(self, video: VideoSample, task: str):
        base = "lta" if task == "lta_train" else task
        if base not in self.allowed:
            raise PermissionError(
                f"annotations for task {base!r} are not available in this phase")
        if task == "ar":
            return ar_annotations(video)
        if task == "oscc":
            return oscc_annotations(video)
        if task == "pnr":
            return pnr_annotations(video)
        if task == "mq":
            return mq_annotations(video)
        if task == "lta":
            return lta_annotations(video, self.lta_steps)
        if task == "lta_train":
            return lta_train_instances(video, self.lta_steps)
        raise ValueError(f"unknown task {task!r}")


def build_batch_graph(videos: list[VideoSample], rule: EdgeRule) -> TemporalGraph:
    """Concatenate videos into one stage-1 graph."""
    feats = np.concatenate([v.features for v in videos], axis=0)
    pos = np.concatenate([v.positions_s for v in videos])
    bounds = np.cumsum([0] + [len(v.positions_s) for v in videos])
    return build_graph(feats, pos, bounds, rule=rule, stage=1)


# ---------------------------------------------------------------------------
# per-task branches
# ---------------------------------------------------------------------------

@dataclass
class TaskBranch:
    """Neck plus head weights for one task."""

    task: str
    neck: NeckParams
    heads: dict

    @classmethod
    def init(cls, rng: np.random.Generator, task: str, world: WorldInfo
             ) -> "TaskBranch":
        dim = world.dim
        neck = NeckParams.init(rng, dim)
        if task == "ar":
            heads = {"verb": ClassifierParams.init(rng, dim, world.num_verbs),
                     "noun": ClassifierParams.init(rng, dim, world.num_nouns)}
        elif task == "oscc":
            heads = {"cls": ClassifierParams.init(rng, dim, 2)}
        elif task == "pnr":
            heads = {"scorer": ScorerParams.init(rng, dim)}
        elif task == "mq":
            heads = {"mq": MqParams.init(rng, dim, world.mq_classes)}
        elif task == "lta":
            heads = {"lta": LtaParams.init(rng, dim, world.num_verbs,
                                           world.num_nouns, world.lta_steps)}
        else:
            raise ValueError(f"unknown task {task!r}")
        return cls(task, neck, heads)

    def params(self) -> list[Tensor]:
        out = self.neck.params()
        for head in self.heads.values():
            out.extend(head.params())
        return out


def needs_pyramid(tasks) -> bool:
    return "mq" in tasks


def stage_count_for(tasks) -> int:
    return 4 if needs_pyramid(tasks) else 1


@dataclass
class MultiTaskModel:
    """Shared backbone plus one branch per task."""

    backbone_cfg: BackboneConfig
    backbone: BackboneParams
    branches: dict[str, TaskBranch]
    world: WorldInfo

    @classmethod
    def init(cls, rng: np.random.Generator, tasks, world: WorldInfo,
             backbone_cfg: BackboneConfig) -> "MultiTaskModel":
        backbone = BackboneParams.init(rng, backbone_cfg)
        branches = {t: TaskBranch.init(rng, t, world) for t in sorted(tasks)}
        return cls(backbone_cfg, backbone, branches, world)

    @property
    def tasks(self) -> list[str]:
        return sorted(self.branches)

    def forward_backbone(self, graph: TemporalGraph) -> list[StageOutput]:
        return backbone_forward(self.backbone, self.backbone_cfg, graph)


def _freeze(params: list[Tensor]) -> None:
    for t in params:
        t.requires_grad = False


def _column_pair(left: Tensor, right: Tensor) -> Tensor:
    """Stack two (M, 1) tensors into (M, 2)."""
    return transpose(concat_rows([transpose(left), transpose(right)]))


# ---------------------------------------------------------------------------
# per-task losses on one batch
# ---------------------------------------------------------------------------

def _interval_class_loss(necked: Tensor, graph: TemporalGraph,
                         videos: list[VideoSample], view: AnnotationView,
                         task: str, heads: dict) -> Tensor:
    """CE over aligned intervals; covers recognition and state change."""
    rows, verb_labels, noun_labels, flat_labels = [], [], [], []
    for vi, video in enumerate(videos):
        ann = view.annotations(video, task)
        if task == "ar":
            ivals, verbs, nouns = ann
            verb_labels.append(verbs)
            noun_labels.append(nouns)
        else:
            ivals, labels = ann
            flat_labels.append(labels)
        aligned, _ = align_video_intervals(necked, graph, vi, ivals)
        rows.append(aligned)
    pooled = concat_rows(rows)
    if task == "ar":
        verb_logits = classifier_forward(heads["verb"], pooled)
        noun_logits = classifier_forward(heads["noun"], pooled)
        return add(cross_entropy_rows(verb_logits, np.concatenate(verb_labels)),
                   cross_entropy_rows(noun_logits, np.concatenate(noun_labels)))
    logits = classifier_forward(heads["cls"], pooled)
    return cross_entropy_rows(logits, np.concatenate(flat_labels))


def _pnr_node_targets(graph: TemporalGraph, vi: int, ivals: np.ndarray,
                      times: np.ndarray):
    """Node indices and 0/1 keyframe targets inside annotated intervals."""
    sl = graph.video_slice(vi)
    pos = graph.positions_s[sl]
    node_idx, targets = [], []
    for (start, end), key_t in zip(ivals, times):
        inside = np.nonzero((pos > start) & (pos < end))[0]
        if len(inside) == 0:
            continue
        nearest = inside[np.argmin(np.abs(pos[inside] - key_t))]
        for i in inside:
            node_idx.append(sl.start + i)
            targets.append(1.0 if i == nearest else 0.0)
    return np.asarray(node_idx, dtype=np.intp), np.asarray(targets)


def _pnr_loss(necked: Tensor, graph: TemporalGraph,
              videos: list[VideoSample], view: AnnotationView,
              heads: dict) -> Tensor:
    idx_parts, tgt_parts = [], []
    for vi, video in enumerate(videos):
        ivals, times = view.annotations(video, "pnr")
        if len(ivals) == 0:
            continue
        idx, tgt = _pnr_node_targets(graph, vi, ivals, times)
        if len(idx):
            idx_parts.append(idx)
            tgt_parts.append(tgt)
    if not idx_parts:
        return Tensor(0.0)
    logits = scorer_forward(heads["scorer"], gather_rows(necked, np.concatenate(idx_parts)))
    return bce_with_logits(logits, np.concatenate(tgt_parts))


def _mq_loss(stage_features: list[Tensor], stages: list[StageOutput],
             videos: list[VideoSample], view: AnnotationView,
             heads: dict, world: WorldInfo) -> Tensor:
    """Focal classification over every node of every stage plus
    distance-IoU regression over positive nodes."""
    score_rows, cls_rows = [], []
    reg_pred_start, reg_pred_end, reg_true = [], [], []
    num_pos = 0
    for necked, stage_out in zip(stage_features, stages):
        g = stage_out.graph
        scores, offsets = mq_forward(heads["mq"], necked, g.stage)
        for vi, video in enumerate(videos):
            ivals, cats = view.annotations(video, "mq")
            sl = g.video_slice(vi)
            pos = g.positions_s[sl]
            cls_t, off_t, pos_mask = mq_targets(pos, g.stage, ivals, cats,
                                                world.mq_classes)
            node_rows = np.arange(sl.start, sl.stop, dtype=np.intp)
            score_rows.append(gather_rows(scores, node_rows))
            cls_rows.append(cls_t)
            if pos_mask.any():
                num_pos += int(pos_mask.sum())
                pos_nodes = node_rows[pos_mask]
                off_rows = gather_rows(offsets, pos_nodes)
                centers = pos[pos_mask].reshape(-1, 1)
                starts = sub(Tensor(centers), take_cols(off_rows, [0]))
                ends = add(Tensor(centers), take_cols(off_rows, [1]))
                reg_pred_start.append(starts)
                reg_pred_end.append(ends)
                scale = 2.0 ** (g.stage - 1)
                true_ival = np.stack([
                    centers[:, 0] - off_t[pos_mask, 0] * scale,
                    centers[:, 0] + off_t[pos_mask, 1] * scale,
                ], axis=1)
                reg_true.append(true_ival)
    all_scores = concat_rows(score_rows)
    all_cls = np.concatenate(cls_rows, axis=0)
    loss = focal_loss(all_scores, all_cls, normalizer=float(max(num_pos, 1)))
    if reg_pred_start:
        pred = _column_pair(concat_rows(reg_pred_start), concat_rows(reg_pred_end))
        loss = add(loss, diou_loss(pred, np.concatenate(reg_true, axis=0)))
    return loss


def _lta_loss(necked: Tensor, graph: TemporalGraph,
              videos: list[VideoSample], view: AnnotationView,
              heads: dict) -> Tensor:
    steps = heads["lta"].num_steps
    terms = []
    for vi, video in enumerate(videos):
        instances = view.annotations(video, "lta_train")
        instances = [inst for inst in instances if len(inst[1])]
        if not instances:
            continue
        anchors = np.array([inst[0] for inst in instances])
        contexts, _ = align_video_intervals(necked, graph, vi, anchors)
        verb_logits, noun_logits = lta_forward(heads["lta"], contexts)
        rows, verbs, nouns = [], [], []
        for m, (_, vs, ns) in enumerate(instances):
            rows.extend(range(m * steps, m * steps + len(vs)))
            verbs.extend(vs)
            nouns.extend(ns)
        rows = np.array(rows, dtype=np.intp)
        terms.append(add(
            cross_entropy_rows(gather_rows(verb_logits, rows),
                               np.array(verbs, dtype=np.intp)),
            cross_entropy_rows(gather_rows(noun_logits, rows),
                               np.array(nouns, dtype=np.intp))))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return mul(total, Tensor(1.0 / len(terms)))


def task_loss(branch: TaskBranch, stage_features: list[Tensor],
              stages: list[StageOutput], videos: list[VideoSample],
              view: AnnotationView, world: WorldInfo) -> Tensor:
    """Loss of one task on one batch, given its necked features per stage.

    Dense tasks consume only the full-resolution stage; the detection
    task consumes every stage.
    """
    graph = stages[DENSE_STAGE].graph
    necked = stage_features[DENSE_STAGE]
    if branch.task in ("ar", "oscc"):
        return _interval_class_loss(necked, graph, videos, view,
                                    branch.task, branch.heads)
    if branch.task == "pnr":
        return _pnr_loss(necked, graph, videos, view, branch.heads)
    if branch.task == "mq":
        return _mq_loss(stage_features, stages, videos, view,
                        branch.heads, world)
    if branch.task == "lta":
        return _lta_loss(necked, graph, videos, view, branch.heads)
    raise ValueError(f"unknown task {branch.task!r}")


# ---------------------------------------------------------------------------
# phase one: single-task and multi-task training
# ---------------------------------------------------------------------------

def _train_loop(model: MultiTaskModel, videos: list[VideoSample],
                view: AnnotationView, cfg: TrainConfig,
                trainable_backbone: bool = True,
                batch_hook=None) -> None:
    """Shared optimization loop: one optimizer per parameter group.

    ``batch_hook(model, stages, videos, tape)`` may return an extra loss
    term; phase two uses it to insert interaction branches.
    """
    rng = np.random.default_rng(cfg.seed)
    groups: dict[str, tuple[list[Tensor], float, Adam]] = {}
    if trainable_backbone:
        bb = model.backbone.params()
        groups["backbone"] = (bb, cfg.base_lr, Adam(bb, cfg.base_lr))
    for name, branch in model.branches.items():
        ps = [p for p in branch.params() if p.requires_grad]
        if ps:
            groups[name] = (ps, cfg.lr_for(name), Adam(ps, cfg.lr_for(name)))
    all_params = [p for ps, _, _ in groups.values() for p in ps]

    for epoch in range(cfg.epochs):
        for _, (ps, base, opt) in groups.items():
            opt.set_lr(lr_at(epoch, base, cfg.warmup_epochs, cfg.epochs))
        order = rng.permutation(len(videos))
        for lo in range(0, len(order), cfg.batch_videos):
            batch = [videos[i] for i in order[lo:lo + cfg.batch_videos]]
            graph = build_batch_graph(batch, model.backbone_cfg.edge_rule)
            with GradientTape() as tape:
                stages = model.forward_backbone(graph)
                loss = None
                if batch_hook is not None:
                    loss = batch_hook(model, stages, batch, view)
                else:
                    for branch in model.branches.values():
                        necked = [neck_forward(branch.neck, s.features)
                                  for s in stages]
                        term = task_loss(branch, necked, stages, batch,
                                         view, model.world)
                        loss = term if loss is None else add(loss, term)
            backward(tape, loss, leaves=all_params)
            for _, (_, _, opt) in groups.items():
                opt.step()
                opt.zero_grad()


def run_single(task: str, ds: SynthDataset, cfg: TrainConfig,
               backbone_cfg: BackboneConfig | None = None) -> MultiTaskModel:
    """Fresh model trained on one task alone."""
    world = WorldInfo.from_dataset(ds)
    if backbone_cfg is None:
        backbone_cfg = BackboneConfig(d_in=world.dim, d_model=world.dim,
                                      num_stages=stage_count_for([task]))
    rng = np.random.default_rng(cfg.seed)
    model = MultiTaskModel.init(rng, [task], world, backbone_cfg)
    view = AnnotationView([task], world.lta_steps)
    _train_loop(model, ds.train, view, cfg)
    return model


def run_mtl(tasks, ds: SynthDataset, cfg: TrainConfig,
            backbone_cfg: BackboneConfig | None = None) -> MultiTaskModel:
    """Hard parameter sharing over several tasks, losses summed unweighted."""
    tasks = sorted(tasks)
    world = WorldInfo.from_dataset(ds)
    if backbone_cfg is None:
        backbone_cfg = BackboneConfig(d_in=world.dim, d_model=world.dim,
                                      num_stages=stage_count_for(tasks))
    rng = np.random.default_rng(cfg.seed)
    model = MultiTaskModel.init(rng, tasks, world, backbone_cfg)
    view = AnnotationView(tasks, world.lta_steps)
    _train_loop(model, ds.train, view, cfg)
    return model


# ---------------------------------------------------------------------------
# phase two: prototype banks and novel-task training
# ---------------------------------------------------------------------------

def build_prototype_banks(model: MultiTaskModel, ds: SynthDataset,
                          support_tasks=None) -> dict[str, PrototypeBank]:
    """Summarize each support task as (verb, noun)-keyed prototypes.

    Every annotated recognition interval contributes one row: node
    features are aligned over the interval first, then projected through
    the support task's neck, then averaged per label pair. Banks come out
    frozen.
    """
    support_tasks = sorted(support_tasks or model.tasks)
    view = AnnotationView(set(support_tasks) | {"ar"},
                          model.world.lta_steps)
    per_task_rows: dict[str, list[np.ndarray]] = {t: [] for t in support_tasks}
    keys: list[np.ndarray] = []
    for video in ds.train:
        graph = build_batch_graph([video], model.backbone_cfg.edge_rule)
        stages = model.forward_backbone(graph)
        feats = stages[DENSE_STAGE].features
        ivals, verbs, nouns = view.annotations(video, "ar")
        aligned, _ = align_video_intervals(feats, stages[DENSE_STAGE].graph,
                                           0, ivals)
        keys.append(np.stack([verbs, nouns], axis=1))
        for t in support_tasks:
            projected = neck_forward(model.branches[t].neck, aligned)
            per_task_rows[t].append(projected.data)
    all_keys = np.concatenate(keys, axis=0)
    return {t: build_prototypes(t, np.concatenate(per_task_rows[t], axis=0),
                                all_keys)
            for t in support_tasks}


@dataclass
class NovelModel:
    """Phase-two model: warm-started backbone, novel branch, frozen support
    necks, and one interaction stack per support task."""

    base: MultiTaskModel
    novel: str
    support_necks: dict[str, NeckParams]
    interactions: dict[str, InteractionParams]
    banks: dict[str, PrototypeBank]
    cfg: TrainConfig
    interaction_enabled: bool

    def fused_stage_features(self, stages: list[StageOutput]
                             ) -> list[Tensor]:
        """Per stage: mean of the novel branch and interaction branches.

        Support branches start from detached backbone features, so the
        novel loss cannot reach the backbone through them; with
        interaction disabled this reduces exactly to the plain novel neck.
        """
        branch = self.base.branches[self.novel]
        out = []
        for s in stages:
            parts = [neck_forward(branch.neck, s.features)]
            if self.interaction_enabled:
                blocked = s.features.detach()
                for t in sorted(self.interactions):
                    sup = neck_forward(self.support_necks[t], blocked)
                    parts.append(interaction_forward(
                        self.interactions[t], sup, self.banks[t],
                        self.cfg.knn_k, self.cfg.rematch))
            out.append(fuse_features(parts))
        return out


def run_novel(novel_task: str, ds: SynthDataset, cfg: TrainConfig,
              support_model: MultiTaskModel,
              banks: dict[str, PrototypeBank] | None = None,
              interaction: bool = True,
              freeze_backbone: bool = False) -> tuple[MultiTaskModel, NovelModel]:
    """Train a novel task against a phase-one support model.

    ``interaction=True`` is the transfer path; ``interaction=False`` is
    the fine-tune baseline (same code, no interaction branches);
    ``freeze_backbone=True`` on top of that is the head-tuning baseline.
    Only the novel task's annotations are readable in this phase.
    """
    if interaction and not banks:
        raise ValueError("interaction requires prototype banks")
    world = support_model.world
    backbone_cfg = BackboneConfig(
        layer_kind=support_model.backbone_cfg.layer_kind,
        d_in=world.dim, d_model=world.dim,
        num_stages=stage_count_for([novel_task]),
        layers_per_stage=support_model.backbone_cfg.layers_per_stage,
        threshold_s=support_model.backbone_cfg.threshold_s,
        pooling=support_model.backbone_cfg.pooling,
        gate_hidden=support_model.backbone_cfg.gate_hidden,
        disable_sign=support_model.backbone_cfg.disable_sign,
        disable_gate=support_model.backbone_cfg.disable_gate,
    )
    rng = np.random.default_rng(cfg.seed + 17)

    # warm-start: copy phase-one backbone weights; reuse them for extra
    # stages the support model did not have
    backbone = BackboneParams.init(rng, backbone_cfg)
    src_stages = support_model.backbone.stages
    for i, block in enumerate(backbone.stages):
        src_block = src_stages[min(i, len(src_stages) - 1)]
        for lp, src_lp in zip(block, src_block):
            for t, src_t in zip(lp.params(), src_lp.params()):
                if t.data.shape == src_t.data.shape:
                    t.data = src_t.data.copy()

    model = MultiTaskModel.init(rng, [novel_task], world, backbone_cfg)
    model.backbone = backbone
    if freeze_backbone:
        _freeze(model.backbone.params())

    support_necks = {}
    interactions = {}
    if interaction:
        for t in sorted(banks):
            neck_copy = copy.deepcopy(support_model.branches[t].neck)
            _freeze(neck_copy.params())
            support_necks[t] = neck_copy
            interactions[t] = InteractionParams.init(
                rng, world.dim, cfg.interaction_layers)

    novel = NovelModel(model, novel_task, support_necks, interactions,
                       banks or {}, cfg, interaction)

    # interaction weights train as their own group inside the novel branch
    branch = model.branches[novel_task]
    extra = [p for ip in interactions.values() for p in ip.params()]
    if extra:
        branch.heads = dict(branch.heads)
        branch.heads["_interaction"] = _ParamsHolder(extra)

    view = AnnotationView([novel_task], world.lta_steps)

    def hook(mdl: MultiTaskModel, stages, batch, v):
        fused = novel.fused_stage_features(stages)
        return task_loss(branch, fused, stages, batch, v, world)

    _train_loop(model, ds.train, view, cfg,
                trainable_backbone=not freeze_backbone, batch_hook=hook)
    return model, novel


class _ParamsHolder:
    """Wraps a flat parameter list so it can live in a branch's head dict."""

    def __init__(self, params: list[Tensor]):
        self._params = params

    def params(self) -> list[Tensor]:
        return self._params


# ---------------------------------------------------------------------------
# token-translation arm
# ---------------------------------------------------------------------------

@dataclass
class TranslationModel:
    """Novel model whose dense features are encoder-translated tokens."""

    base: MultiTaskModel
    novel: str
    support_models: dict[str, MultiTaskModel]
    encoder: TranslationParams

    def translated_dense(self, batch: list[VideoSample],
                         stages: list[StageOutput]) -> Tensor:
        """Per video, run all tasks' tokens through the masked encoder and
        keep the novel task's rows; support tokens are frozen features."""
        graph = stages[DENSE_STAGE].graph
        novel_neck = self.base.branches[self.novel].neck
        necked = neck_forward(novel_neck, stages[DENSE_STAGE].features)
        out_rows = []
        for vi, video in enumerate(batch):
            sl = graph.video_slice(vi)
            rows = gather_rows(necked, np.arange(sl.start, sl.stop))
            tokens = {self.novel: (rows, graph.positions_s[sl], 1)}
            for t, m in self.support_models.items():
                sg = build_batch_graph([video], m.backbone_cfg.edge_rule)
                s_stages = m.forward_backbone(sg)
                sup = neck_forward(m.branches[t].neck,
                                   s_stages[DENSE_STAGE].features)
                tokens[t] = (sup.detach(), sg.positions_s, 1)
            out_rows.append(translation_forward(self.encoder, tokens, self.novel))
        return concat_rows(out_rows)


def run_translation(novel_task: str, ds: SynthDataset, cfg: TrainConfig,
                    support_models: dict[str, MultiTaskModel]
                    ) -> tuple[MultiTaskModel, TranslationModel]:
    """Train the encoder-translation baseline for a novel task.

    Support models stay frozen token providers; the novel backbone, neck,
    head, and the encoder train on the novel task only.
    """
    world = WorldInfo.from_dataset(ds)
    backbone_cfg = BackboneConfig(d_in=world.dim, d_model=world.dim,
                                  num_stages=stage_count_for([novel_task]))
    rng = np.random.default_rng(cfg.seed + 29)
    model = MultiTaskModel.init(rng, [novel_task], world, backbone_cfg)
    for m in support_models.values():
        _freeze(m.backbone.params())
        for b in m.branches.values():
            _freeze(b.params())
    encoder = TranslationParams.init(
        rng, world.dim, sorted(support_models) + [novel_task])
    tm = TranslationModel(model, novel_task, support_models, encoder)

    branch = model.branches[novel_task]
    branch.heads = dict(branch.heads)
    branch.heads["_encoder"] = _ParamsHolder(encoder.params())
    view = AnnotationView([novel_task], world.lta_steps)

    def hook(mdl, stages, batch, v):
        translated = tm.translated_dense(batch, stages)
        feats = [translated] + [neck_forward(branch.neck, s.features)
                                for s in stages[1:]]
        return task_loss(branch, feats, stages, batch, v, world)

    _train_loop(model, ds.train, view, cfg, batch_hook=hook)
    return model, tm


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _eval_dense_features(model: MultiTaskModel, video: VideoSample,
                         novel: NovelModel | None,
                         translation: TranslationModel | None):
    graph = build_batch_graph([video], model.backbone_cfg.edge_rule)
    stages = model.forward_backbone(graph)
    if novel is not None:
        feats = novel.fused_stage_features(stages)
    elif translation is not None:
        translated = translation.translated_dense([video], stages)
        feats = [translated] + [
            neck_forward(model.branches[translation.novel].neck, s.features)
            for s in stages[1:]]
    else:
        feats = None
    return graph, stages, feats


def evaluate(model: MultiTaskModel, videos: list[VideoSample],
             cfg: TrainConfig, tasks=None,
             novel: NovelModel | None = None,
             translation: TranslationModel | None = None) -> dict:
    """Validation metrics per task; deterministic given cfg.seed."""
    world = model.world
    tasks = sorted(tasks or model.tasks)
    view = AnnotationView(tasks, world.lta_steps)
    out: dict[str, dict] = {}

    for task in tasks:
        branch = model.branches[task]
        if task in ("ar", "oscc"):
            preds_v, labels_v, preds_n, labels_n = [], [], [], []
            for video in videos:
                graph, stages, fused = _eval_dense_features(
                    model, video, novel, translation)
                necked = (fused[DENSE_STAGE] if fused is not None else
                          neck_forward(branch.neck, stages[DENSE_STAGE].features))
                ann = view.annotations(video, task)
                ivals = ann[0]
                aligned, _ = align_video_intervals(
                    necked, stages[DENSE_STAGE].graph, 0, ivals)
                if task == "ar":
                    preds_v.append(classifier_forward(
                        branch.heads["verb"], aligned).data.argmax(axis=1))
                    preds_n.append(classifier_forward(
                        branch.heads["noun"], aligned).data.argmax(axis=1))
                    labels_v.append(ann[1])
                    labels_n.append(ann[2])
                else:
                    preds_v.append(classifier_forward(
                        branch.heads["cls"], aligned).data.argmax(axis=1))
                    labels_v.append(ann[1])
            if task == "ar":
                verb_top1 = top1_accuracy(np.concatenate(preds_v),
                                          np.concatenate(labels_v))
                noun_top1 = top1_accuracy(np.concatenate(preds_n),
                                          np.concatenate(labels_n))
                out[task] = {"verb_top1": verb_top1, "noun_top1": noun_top1,
                             "mean_top1": (verb_top1 + noun_top1) / 2.0}
            else:
                out[task] = {"top1": top1_accuracy(np.concatenate(preds_v),
                                                   np.concatenate(labels_v))}

        elif task == "pnr":
            pred_t, true_t = [], []
            for video in videos:
                graph, stages, fused = _eval_dense_features(
                    model, video, novel, translation)
                necked = (fused[DENSE_STAGE] if fused is not None else
                          neck_forward(branch.neck, stages[DENSE_STAGE].features))
                ivals, times = view.annotations(video, "pnr")
                if len(ivals) == 0:
                    continue
                scores = scorer_forward(branch.heads["scorer"], necked).data[:, 0]
                pos = stages[DENSE_STAGE].graph.positions_s
                for (start, end), key_t in zip(ivals, times):
                    inside = np.nonzero((pos > start) & (pos < end))[0]
                    if len(inside) == 0:
                        continue
                    best = inside[np.argmax(scores[inside])]
                    pred_t.append(pos[best])
                    true_t.append(key_t)
            out[task] = {"loc_err_s": localization_error(pred_t, true_t)
                         if pred_t else float("nan")}

        elif task == "mq":
            det_i, det_s, det_c, det_v = [], [], [], []
            gt_i, gt_c, gt_v = [], [], []
            for video in videos:
                graph, stages, fused = _eval_dense_features(
                    model, video, novel, translation)
                ivals, cats = view.annotations(video, "mq")
                gt_i.append(ivals)
                gt_c.append(cats)
                gt_v.extend([video.video_id] * len(cats))
                cand_i, cand_s, cand_c = [], [], []
                for si, stage_out in enumerate(stages):
                    necked = (fused[si] if fused is not None else
                              neck_forward(branch.neck, stage_out.features))
                    scores, offsets = mq_forward(branch.heads["mq"], necked,
                                                 stage_out.graph.stage)
                    iv, sc, cl = mq_decode(
                        stage_out.graph.positions_s, scores.data, offsets.data,
                        (0.0, video.duration_s), cfg.mq_min_score)
                    cand_i.append(iv)
                    cand_s.append(sc)
                    cand_c.append(cl)
                iv = np.concatenate(cand_i, axis=0) if cand_i else np.empty((0, 2))
                sc = np.concatenate(cand_s) if cand_s else np.empty(0)
                cl = np.concatenate(cand_c) if cand_c else np.empty(0, dtype=np.intp)
                for cls in np.unique(cl):
                    sel = np.nonzero(cl == cls)[0]
                    keep, decayed = soft_nms(iv[sel], sc[sel])
                    for j, s in zip(keep, decayed):
                        det_i.append(iv[sel[j]])
                        det_s.append(s)
                        det_c.append(cls)
                        det_v.append(video.video_id)
            gt_i = np.concatenate(gt_i, axis=0) if gt_i else np.empty((0, 2))
            gt_c = np.concatenate(gt_c) if gt_c else np.empty(0, dtype=np.intp)
            result = map_at_iou(det_i, det_s, det_c, det_v, gt_i, gt_c, gt_v)
            out[task] = {
                "map_avg": result["mean"],
                **{f"map@{thr:.1f}": v
                   for thr, v in result["per_threshold"].items()},
                "recall@1_iou0.5": recall_at_k(det_i, det_s, det_c, det_v,
                                               gt_i, gt_c, gt_v, k=1),
                "recall@5_iou0.5": recall_at_k(det_i, det_s, det_c, det_v,
                                               gt_i, gt_c, gt_v, k=5),
            }

        elif task == "lta":
            ed_v, ed_n = [], []
            for idx, video in enumerate(videos):
                graph, stages, fused = _eval_dense_features(
                    model, video, novel, translation)
                necked = (fused[DENSE_STAGE] if fused is not None else
                          neck_forward(branch.neck, stages[DENSE_STAGE].features))
                anchor, verbs, nouns = view.annotations(video, "lta")
                if len(verbs) == 0 or anchor[1] <= 0:
                    continue
                context, _ = align_video_intervals(
                    necked, stages[DENSE_STAGE].graph, 0,
                    np.array([anchor]))
                vl, nl = lta_forward(branch.heads["lta"], context)
                rng = np.random.default_rng(cfg.seed * 100003 + idx)
                cands = lta_candidates(vl.data, nl.data, cfg.num_candidates, rng)
                z = len(verbs)
                ed_v.append(edit_distance([c[0][:z] for c in cands], verbs))
                ed_n.append(edit_distance([c[1][:z] for c in cands], nouns))
            verb_ed = float(np.mean(ed_v)) if ed_v else float("nan")
            noun_ed = float(np.mean(ed_n)) if ed_n else float("nan")
            out[task] = {"verb_ed": verb_ed, "noun_ed": noun_ed,
                         "mean_ed": (verb_ed + noun_ed) / 2.0}
        else:
            raise ValueError(f"unknown task {task!r}")
    return out
