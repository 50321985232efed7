"""Temporal network data model: snapshots, connectivity labels, windows, hops.

A network state is one second of observed traffic: node kinematics plus every
message record (possibly several per ordered pair).  A pair counts as
connected when at least one of its records arrived at or under the path-loss
threshold.  Snapshots and windows are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
STEP_SECONDS = 1.0
DEFAULT_THRESHOLD_DB = 128.0

NODE_FEATURES = ("vx", "vy")
EDGE_FEATURES = ("distance_m", "path_loss_db", "prop_delay_s", "timestamp_s")


class DatasetFormatError(ValueError):
    """A snapshot stream file violates the schema (message carries line/field)."""


@dataclass(frozen=True)
class NodeState:
    id: int
    x: float
    y: float
    vx: float
    vy: float


@dataclass(frozen=True)
class EdgeRecord:
    """One delivered message: sender -> receiver with radio measurements.

    ``timestamp_s`` is the offset within the one-second step, not absolute time.
    """

    src: int
    dst: int
    distance_m: float
    path_loss_db: float
    prop_delay_s: float
    timestamp_s: float


@dataclass(frozen=True)
class Snapshot:
    """Network state at step ``t``: nodes with kinematics plus message records."""

    t: int
    nodes: tuple[NodeState, ...]
    edges: tuple[EdgeRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [n.id for n in self.nodes]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError(f"snapshot t={self.t}: node ids must be unique and contiguous from 0")
        n = len(ids)
        for e in self.edges:
            if e.src == e.dst:
                raise ValueError(f"snapshot t={self.t}: self-edge on node {e.src}")
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ValueError(f"snapshot t={self.t}: edge references unknown node id {e.src}->{e.dst}")
            if e.distance_m < 0:
                raise ValueError(f"snapshot t={self.t}: negative distance on edge {e.src}->{e.dst}")
            if e.path_loss_db < 0:
                raise ValueError(f"snapshot t={self.t}: negative path loss on edge {e.src}->{e.dst}")
            if not (0.0 <= e.timestamp_s < STEP_SECONDS):
                raise ValueError(
                    f"snapshot t={self.t}: timestamp {e.timestamp_s} outside [0, {STEP_SECONDS})"
                )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class TemporalWindow:
    """``w`` consecutive snapshots plus the connectivity labels of the next step."""

    snapshots: tuple[Snapshot, ...]
    labels: np.ndarray
    t_target: int

    def __post_init__(self):
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        if not self.snapshots:
            raise ValueError("window needs at least one snapshot")
        steps = [s.t for s in self.snapshots]
        if steps != list(range(steps[0], steps[0] + len(steps))):
            raise ValueError(f"window snapshots must be consecutive, got {steps}")
        if self.t_target != steps[-1] + 1:
            raise ValueError(f"t_target must be {steps[-1] + 1}, got {self.t_target}")
        n = self.snapshots[0].n_nodes
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (n, n):
            raise ValueError(f"labels must be {n}x{n}, got {labels.shape}")
        if np.diagonal(labels).any():
            raise ValueError("label diagonal must be all-zero")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def w(self) -> int:
        return len(self.snapshots)

    @property
    def n_nodes(self) -> int:
        return self.snapshots[0].n_nodes


@dataclass(frozen=True)
class DatasetStats:
    n_states: int
    avg_nodes: float
    avg_edges: float
    feature_mean: dict[str, float] = field(default_factory=dict)
    feature_std: dict[str, float] = field(default_factory=dict)


def label_connectivity(snapshot: Snapshot, threshold_db: float = DEFAULT_THRESHOLD_DB) -> np.ndarray:
    """Binary N x N matrix: (i, j) = 1 iff some record i->j has loss <= threshold.

    The boundary is inclusive: a record at exactly the threshold connects.
    """
    if threshold_db <= 0:
        raise ValueError(f"threshold_db must be positive, got {threshold_db}")
    n = snapshot.n_nodes
    out = np.zeros((n, n), dtype=np.int8)
    for e in snapshot.edges:
        if e.path_loss_db <= threshold_db:
            out[e.src, e.dst] = 1
    return out


def build_windows(
    snapshots: Sequence[Snapshot],
    w: int,
    threshold_db: float = DEFAULT_THRESHOLD_DB,
) -> list[TemporalWindow]:
    """Slide a length-``w`` window over the snapshots; labels come from step t+1.

    Yields ``len(snapshots) - w`` windows; fewer than ``w + 1`` snapshots is an
    error since no window would have a labeled next state.
    """
    if w < 1:
        raise ValueError(f"w must be >= 1, got {w}")
    snapshots = list(snapshots)
    if len(snapshots) < w + 1:
        raise ValueError(
            f"need at least {w + 1} snapshots to build windows of size {w}, got {len(snapshots)}"
        )
    windows = []
    for start in range(len(snapshots) - w):
        target = snapshots[start + w]
        windows.append(
            TemporalWindow(
                snapshots=tuple(snapshots[start : start + w]),
                labels=label_connectivity(target, threshold_db),
                t_target=target.t,
            )
        )
    return windows


def hop_counts(snapshot: Snapshot, threshold_db: float = DEFAULT_THRESHOLD_DB) -> np.ndarray:
    """Directed shortest hop counts on the thresholded connectivity graph.

    Entry (i, j) is the number of links on the shortest i->j route (direct
    link = 1); 0 means unreachable or i = j.
    """
    adj = label_connectivity(snapshot, threshold_db)
    n = snapshot.n_nodes
    neighbors = [np.flatnonzero(adj[i]) for i in range(n)]
    hops = np.zeros((n, n), dtype=np.int64)
    for source in range(n):
        dist = np.full(n, -1, dtype=np.int64)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        reachable = dist > 0
        hops[source, reachable] = dist[reachable]
    return hops


def dataset_stats(snapshots: Sequence[Snapshot]) -> DatasetStats:
    """Counts plus pooled per-feature mean/std over all snapshots."""
    snapshots = list(snapshots)
    if not snapshots:
        return DatasetStats(0, 0.0, 0.0)
    node_rows = [[getattr(n, f) for f in NODE_FEATURES] for s in snapshots for n in s.nodes]
    edge_rows = [[getattr(e, f) for f in EDGE_FEATURES] for s in snapshots for e in s.edges]
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for names, rows in ((NODE_FEATURES, node_rows), (EDGE_FEATURES, edge_rows)):
        if rows:
            arr = np.asarray(rows, dtype=np.float64)
            for k, name in enumerate(names):
                mean[name] = float(arr[:, k].mean())
                std[name] = float(arr[:, k].std())
    return DatasetStats(
        n_states=len(snapshots),
        avg_nodes=float(np.mean([s.n_nodes for s in snapshots])),
        avg_edges=float(np.mean([len(s.edges) for s in snapshots])),
        feature_mean=mean,
        feature_std=std,
    )


# ---------------------------------------------------------------------------
# snapshot stream files: one JSON object per line, header first


def save_snapshots(
    path,
    snapshots: Sequence[Snapshot],
    step_seconds: float = STEP_SECONDS,
    extra_header: dict | None = None,
) -> None:
    """Write a snapshot stream; floats keep full round-trip precision."""
    snapshots = list(snapshots)
    n_nodes = snapshots[0].n_nodes if snapshots else 0
    for s in snapshots:
        if s.n_nodes != n_nodes:
            raise ValueError(f"snapshot t={s.t}: node count {s.n_nodes} != {n_nodes}")
    header = {"format_version": FORMAT_VERSION, "step_seconds": step_seconds, "n_nodes": n_nodes}
    header.update(extra_header or {})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in snapshots:
            fh.write(
                json.dumps(
                    {
                        "t": s.t,
                        "nodes": [
                            {"id": n.id, "x": n.x, "y": n.y, "vx": n.vx, "vy": n.vy}
                            for n in s.nodes
                        ],
                        "edges": [
                            {
                                "src": e.src,
                                "dst": e.dst,
                                "distance_m": e.distance_m,
                                "path_loss_db": e.path_loss_db,
                                "prop_delay_s": e.prop_delay_s,
                                "timestamp_s": e.timestamp_s,
                            }
                            for e in s.edges
                        ],
                    }
                )
                + "\n"
            )


def load_snapshots(path) -> tuple[list[Snapshot], dict]:
    """Read a snapshot stream back; returns (snapshots, header dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: missing header record")
    header = _parse_json(lines[0], 1)
    for required in ("format_version", "step_seconds", "n_nodes"):
        if required not in header:
            raise DatasetFormatError(f"line 1: header missing field '{required}'")
    if header["format_version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported format_version {header['format_version']}")
    snapshots = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        obj = _parse_json(raw, lineno)
        try:
            nodes = tuple(
                NodeState(
                    id=_take(n, "id", lineno),
                    x=_take(n, "x", lineno),
                    y=_take(n, "y", lineno),
                    vx=_take(n, "vx", lineno),
                    vy=_take(n, "vy", lineno),
                )
                for n in _take(obj, "nodes", lineno)
            )
            edges = tuple(
                EdgeRecord(
                    src=_take(e, "src", lineno),
                    dst=_take(e, "dst", lineno),
                    distance_m=_take(e, "distance_m", lineno),
                    path_loss_db=_take(e, "path_loss_db", lineno),
                    prop_delay_s=_take(e, "prop_delay_s", lineno),
                    timestamp_s=_take(e, "timestamp_s", lineno),
                )
                for e in _take(obj, "edges", lineno)
            )
            snap = Snapshot(t=_take(obj, "t", lineno), nodes=nodes, edges=edges)
        except DatasetFormatError:
            raise
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc
        if snap.n_nodes != header["n_nodes"]:
            raise DatasetFormatError(
                f"line {lineno}: field 'nodes' has {snap.n_nodes} entries, header says {header['n_nodes']}"
            )
        snapshots.append(snap)
    return snapshots, header


def _parse_json(raw: str, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"line {lineno}: expected an object")
    return obj


def _take(obj: dict, fieldname: str, lineno: int):
    try:
        return obj[fieldname]
    except (KeyError, TypeError):
        raise DatasetFormatError(f"line {lineno}: missing field '{fieldname}'") from None


def load_published_dataset(path):
    """Adapter for the externally published trace format.

    The upstream file layout is undocumented; convert external traces to the
    snapshot stream format by hand until a schema is published.
    """
    raise NotImplementedError(
        "published trace format is unspecified; convert to the snapshot stream "
        "format (see save_snapshots) instead"
    )
