"""Cross-task transfer through frozen per-task prototype banks.

After multi-task training, each support task is summarized as a bank of
prototypes: annotated intervals are aligned on the recognition
boundaries, projected through that task's neck, and averaged per
(verb, noun) pair. Banks are immutable from then on.

A novel task queries the banks: each node matches its k nearest
prototypes and refines itself through a stack of interaction layers that
mix the node's own projection with the mean of its activated prototypes.
One interaction stack exists per support task; their outputs are fused
either in feature space (mean) or in logit space (per-task heads summed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, matmul, mul
from .optim import uniform_fan_in

__all__ = [
    "PrototypeBank", "build_prototypes", "save_bank", "load_bank",
    "knn_match", "InteractionParams", "interaction_forward",
    "fuse_features", "activation_histogram", "activation_consensus",
]


@dataclass
class PrototypeBank:
    """Frozen prototypes for one support task.

    ``prototypes`` is (P, dim) with rows ordered by ``keys`` (sorted
    (verb, noun) pairs); the array is marked read-only at construction.
    """

    task: str
    prototypes: np.ndarray
    keys: list[tuple[int, int]]

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.prototypes.flags.writeable = False
        if self.prototypes.shape[0] != len(self.keys):
            raise ValueError("one key per prototype row required")
        if sorted(self.keys) != list(self.keys):
            raise ValueError("prototype keys must be sorted")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def build_prototypes(task: str, features: np.ndarray,
                     keys: np.ndarray) -> PrototypeBank:
    """Average per-annotation features into one prototype per (verb, noun).

    ``features`` is (M, dim) task-neck outputs for M annotated intervals;
    ``keys`` is (M, 2) integer verb/noun pairs. Rows come out sorted by
    key so bank layout is deterministic.
    """
    features = np.asarray(features, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.intp).reshape(-1, 2)
    if features.shape[0] != keys.shape[0]:
        raise ValueError("one key pair per feature row required")
    uniq = sorted({(int(v), int(n)) for v, n in keys})
    protos = np.zeros((len(uniq), features.shape[1]))
    for row, (v, n) in enumerate(uniq):
        mask = (keys[:, 0] == v) & (keys[:, 1] == n)
        protos[row] = features[mask].mean(axis=0)
    return PrototypeBank(task=task, prototypes=protos, keys=uniq)


def save_bank(directory: str | Path, bank: PrototypeBank) -> None:
    """Write a bank as <task>.bin (little-endian float32 rows) + <task>.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(bank.prototypes, dtype="<f4")
    (directory / f"{bank.task}.bin").write_bytes(data.tobytes())
    index = {
        "task": bank.task,
        "num_prototypes": bank.size,
        "dim": bank.dim,
        "keys": [[int(v), int(n)] for v, n in bank.keys],
    }
    (directory / f"{bank.task}.json").write_text(
        json.dumps(index, indent=2, sort_keys=True))


def load_bank(directory: str | Path, task: str) -> PrototypeBank:
    directory = Path(directory)
    index = json.loads((directory / f"{task}.json").read_text())
    raw = (directory / f"{task}.bin").read_bytes()
    p, d = index["num_prototypes"], index["dim"]
    if len(raw) != p * d * 4:
        raise ValueError(f"bank {task}: expected {p * d * 4} bytes, found {len(raw)}")
    protos = np.frombuffer(raw, dtype="<f4").reshape(p, d).astype(np.float64)
    keys = [(int(v), int(n)) for v, n in index["keys"]]
    return PrototypeBank(task=task, prototypes=protos, keys=keys)


def knn_match(x: np.ndarray, bank: PrototypeBank, k: int) -> np.ndarray:
    """Indices of each row's k nearest prototypes by Euclidean distance.

    Stable sort breaks distance ties toward the lower prototype index, so
    matching is deterministic. k is capped at the bank size.
    """
    x = np.asarray(x, dtype=np.float64)
    k = min(k, bank.size)
    d2 = ((x[:, None, :] - bank.prototypes[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


@dataclass
class InteractionParams:
    """Interaction stack for one support task: per layer, a projection of
    the node state and a projection of its activated-prototype mean, summed
    with no bias or activation."""

    layers: list[tuple[Tensor, Tensor]]  # (w_self, w_proto) per layer

    @classmethod
    def init(cls, rng, dim: int, num_layers: int) -> "InteractionParams":
        layers = []
        for _ in range(num_layers):
            w_self = Tensor(uniform_fan_in(rng, (dim, dim)), requires_grad=True)
            w_proto = Tensor(uniform_fan_in(rng, (dim, dim)), requires_grad=True)
            layers.append((w_self, w_proto))
        return cls(layers)

    def params(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


def interaction_forward(p: InteractionParams, x: Tensor, bank: PrototypeBank,
                        k: int, rematch: bool = True) -> Tensor:
    """Refine node features against one bank.

    Matching is discrete (no gradient through prototype selection) and the
    prototypes themselves are constants; gradients reach only the two
    projection matrices per layer and the incoming features. With
    ``rematch`` each layer re-queries the bank with its updated features;
    otherwise the input matching is reused throughout.
    """
    idx = knn_match(x.data, bank, k)
    for w_self, w_proto in p.layers:
        if rematch:
            idx = knn_match(x.data, bank, k)
        proto_mean = bank.prototypes[idx].mean(axis=1)
        x = add(matmul(x, w_self), matmul(Tensor(proto_mean), w_proto))
    return x


def fuse_features(branches: list[Tensor]) -> Tensor:
    """Feature-space fusion: plain mean across interaction branches."""
    if not branches:
        raise ValueError("nothing to fuse")
    out = branches[0]
    for b in branches[1:]:
        out = add(out, b)
    return mul(out, Tensor(1.0 / len(branches)))


def activation_histogram(idx: np.ndarray, bank: PrototypeBank
                         ) -> list[tuple[str, int]]:
    """How often each prototype fired across a matching, by key label."""
    counts = np.bincount(np.asarray(idx).reshape(-1), minlength=bank.size)
    return [(f"{v}_{n}", int(c)) for (v, n), c in zip(bank.keys, counts)]


def activation_consensus(matches: dict[str, np.ndarray],
                         banks: dict[str, PrototypeBank]
                         ) -> list[tuple[str, str, float]]:
    """Pairwise agreement between tasks' activations on shared queries.

    For each node, each task activates k prototypes; agreement for a task
    pair is the mean fraction of (verb, noun) keys the two activation sets
    share. Rows come out sorted by task-name pair.
    """
    names = sorted(matches)
    out = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            idx_a, idx_b = matches[a], matches[b]
            keys_a, keys_b = banks[a].keys, banks[b].keys
            n = idx_a.shape[0]
            k = idx_a.shape[1]
            total = 0.0
            for row in range(n):
                set_a = {keys_a[j] for j in idx_a[row]}
                set_b = {keys_b[j] for j in idx_b[row]}
                total += len(set_a & set_b) / k
            out.append((a, b, total / max(n, 1)))
    return out
