"""Videos as temporal graphs: nodes are segments, edges link near-in-time
segments of the same video.

A graph batches several videos; ``video_boundaries`` stores start offsets
so edge building never crosses a video. Node timestamps are kept in
seconds at every stage of the coarsening pyramid and are never rescaled;
what widens with depth is the connection window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "EdgeRule", "TemporalGraph", "build_graph", "rebuild_edges",
    "subsample", "subsample_plan", "threshold_exponent",
    "save_features", "load_features",
]


@dataclass(frozen=True)
class EdgeRule:
    """Connection rule: link nodes closer in time than ``threshold_s``.

    The comparison is strict (|dt| < threshold) and the effective window at
    pyramid stage ``l`` is ``threshold_s * 2**threshold_exponent(l)``, so
    coarser stages see proportionally farther in time.
    """

    threshold_s: float = 2.0


def threshold_exponent(stage: int) -> int:
    """Doubling exponent for a stage: 0 at the full-resolution stage 1."""
    if stage < 1:
        raise ValueError(f"stage must be >= 1, got {stage}")
    return stage - 1


@dataclass
class TemporalGraph:
    """One batch of videos as a single graph.

    features:          (N, D) float64 node features
    positions_s:       (N,) segment midpoint timestamps in seconds
    edges:             (E, 2) int array of directed edges [src, dst];
                       built symmetric (both directions present)
    stage:             pyramid stage, 1 = full resolution
    video_boundaries:  start offsets per video plus final N, length V+1
    """

    features: np.ndarray
    positions_s: np.ndarray
    edges: np.ndarray
    stage: int = 1
    video_boundaries: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.positions_s = np.asarray(self.positions_s, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        if self.video_boundaries is None:
            self.video_boundaries = np.array([0, self.num_nodes], dtype=np.intp)
        else:
            self.video_boundaries = np.asarray(self.video_boundaries, dtype=np.intp)
        if self.positions_s.shape != (self.num_nodes,):
            raise ValueError("positions_s must have one entry per node")
        if self.video_boundaries[0] != 0 or self.video_boundaries[-1] != self.num_nodes:
            raise ValueError("video_boundaries must start at 0 and end at num_nodes")

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_videos(self) -> int:
        return len(self.video_boundaries) - 1

    def video_of(self) -> np.ndarray:
        """Video index per node, derived from the boundary offsets."""
        out = np.zeros(self.num_nodes, dtype=np.intp)
        for v in range(self.num_videos):
            out[self.video_boundaries[v]:self.video_boundaries[v + 1]] = v
        return out

    def video_slice(self, v: int) -> slice:
        return slice(int(self.video_boundaries[v]), int(self.video_boundaries[v + 1]))

    def neighbors_of(self, i: int) -> np.ndarray:
        """Destination nodes of edges leaving ``i`` (sorted, unique)."""
        return np.unique(self.edges[self.edges[:, 0] == i, 1])


def _edges_for_positions(positions_s: np.ndarray, boundaries: np.ndarray,
                         window_s: float) -> np.ndarray:
    """All ordered pairs (i, j), i != j, same video, |t_i - t_j| < window."""
    src_parts, dst_parts = [], []
    for v in range(len(boundaries) - 1):
        lo, hi = int(boundaries[v]), int(boundaries[v + 1])
        pos = positions_s[lo:hi]
        n = hi - lo
        if n <= 1:
            continue
        dt = np.abs(pos[:, None] - pos[None, :])
        keep = dt < window_s
        np.fill_diagonal(keep, False)
        src, dst = np.nonzero(keep)
        src_parts.append(src + lo)
        dst_parts.append(dst + lo)
    if not src_parts:
        return np.empty((0, 2), dtype=np.intp)
    return np.stack([np.concatenate(src_parts), np.concatenate(dst_parts)], axis=1)


def build_graph(features: np.ndarray, positions_s: np.ndarray,
                video_boundaries: np.ndarray | None = None,
                rule: EdgeRule = EdgeRule(), stage: int = 1) -> TemporalGraph:
    """Assemble a graph and wire its edges for the given stage."""
    features = np.asarray(features, dtype=np.float64)
    positions_s = np.asarray(positions_s, dtype=np.float64)
    if video_boundaries is None:
        video_boundaries = np.array([0, features.shape[0]], dtype=np.intp)
    window = rule.threshold_s * (2.0 ** threshold_exponent(stage))
    edges = _edges_for_positions(positions_s, np.asarray(video_boundaries), window)
    return TemporalGraph(features, positions_s, edges, stage, np.asarray(video_boundaries))


def rebuild_edges(g: TemporalGraph, rule: EdgeRule = EdgeRule()) -> TemporalGraph:
    """Recompute edges from current positions and stage, leaving nodes alone."""
    window = rule.threshold_s * (2.0 ** threshold_exponent(g.stage))
    edges = _edges_for_positions(g.positions_s, g.video_boundaries, window)
    return replace(g, edges=edges)


def _pool_neighborhoods(g: TemporalGraph, how: str) -> np.ndarray:
    """Per node, pool features over {node} union its out-neighbors."""
    feats = g.features
    n = g.num_nodes
    if how == "mean":
        acc = feats.copy()
        count = np.ones(n)
        if len(g.edges):
            np.add.at(acc, g.edges[:, 0], feats[g.edges[:, 1]])
            np.add.at(count, g.edges[:, 0], 1.0)
        return acc / count[:, None]
    if how == "max":
        acc = feats.copy()
        if len(g.edges):
            np.maximum.at(acc, g.edges[:, 0], feats[g.edges[:, 1]])
        return acc
    raise ValueError(f"unknown pooling {how!r}")


def subsample_plan(g: TemporalGraph, pooling: str) -> tuple[np.ndarray, np.ndarray]:
    """Survivor node indices and new video boundaries for one halving.

    mean / max / video-ss keep even local indices within each video;
    batch-ss alternates nodes across the whole batch, so per-video counts
    may deviate by one while the global count still ceil-halves.
    """
    if pooling not in ("mean", "max", "video-ss", "batch-ss"):
        raise ValueError(f"unknown pooling {pooling!r}")
    keep_parts = []
    new_bounds = [0]
    for v in range(g.num_videos):
        lo, hi = int(g.video_boundaries[v]), int(g.video_boundaries[v + 1])
        if pooling == "batch-ss":
            first = lo + (lo % 2)  # global even indices only
            keep = np.arange(first, hi, 2, dtype=np.intp)
        else:
            keep = np.arange(lo, hi, 2, dtype=np.intp)
        keep_parts.append(keep)
        new_bounds.append(new_bounds[-1] + len(keep))
    keep_idx = np.concatenate(keep_parts) if keep_parts else np.empty(0, dtype=np.intp)
    return keep_idx, np.asarray(new_bounds, dtype=np.intp)


def subsample(g: TemporalGraph, pooling: str = "mean",
              rule: EdgeRule = EdgeRule()) -> TemporalGraph:
    """Halve each video (keep even local indices) and advance the stage.

    Survivor features depend on ``pooling``:
      mean / max:  pooled over each survivor's pre-drop closed neighborhood
      video-ss:    raw features, alternation restarting at each video
      batch-ss:    raw features, alternation running across the whole batch
                   (per-video halving then only holds globally)

    Edges are rebuilt for the new stage's wider window. Positions carry
    over in seconds, untouched.
    """
    if pooling in ("mean", "max"):
        pooled = _pool_neighborhoods(g, pooling)
    else:
        pooled = g.features
    keep_idx, new_bounds = subsample_plan(g, pooling)
    out = TemporalGraph(
        features=pooled[keep_idx],
        positions_s=g.positions_s[keep_idx],
        edges=np.empty((0, 2), dtype=np.intp),
        stage=g.stage + 1,
        video_boundaries=new_bounds,
    )
    return rebuild_edges(out, rule)


# ---------------------------------------------------------------------------
# on-disk feature format: little-endian float32 rows + JSON sidecar
# ---------------------------------------------------------------------------

def save_features(path: str | Path, features: np.ndarray,
                  positions_s: np.ndarray, video_id: str) -> None:
    """Write one video's features as raw .bin plus a .json sidecar."""
    path = Path(path)
    feats = np.ascontiguousarray(features, dtype="<f4")
    path.with_suffix(".bin").write_bytes(feats.tobytes())
    sidecar = {
        "num_segments": int(feats.shape[0]),
        "dim": int(feats.shape[1]),
        "segment_midpoints_s": [float(t) for t in positions_s],
        "video_id": video_id,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_features(path: str | Path) -> tuple[np.ndarray, np.ndarray, str]:
    """Read features saved by ``save_features``; validates byte length."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    n, d = sidecar["num_segments"], sidecar["dim"]
    raw = path.with_suffix(".bin").read_bytes()
    expect = n * d * 4
    if len(raw) != expect:
        raise ValueError(f"{path}: expected {expect} bytes, found {len(raw)}")
    feats = np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float64)
    positions = np.asarray(sidecar["segment_midpoints_s"], dtype=np.float64)
    if positions.shape != (n,):
        raise ValueError(f"{path}: sidecar midpoints do not match num_segments")
    return feats, positions, sidecar["video_id"]
