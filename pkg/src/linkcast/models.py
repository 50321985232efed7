"""Window encoders, pairwise decoding, and the fit/predict estimator surface.

Two estimator families cover the model zoo:

* :class:`GraphLinkPredictor` -- a per-snapshot spatial encoder (``gcn``,
  ``gat``, ``gatv2``, ``gtc`` or ``none``) feeding a recurrent temporal
  encoder (``lstm``, ``gru`` or ``none``), with an MLP scoring each ordered
  node-pair embedding.
* :class:`BaselineLinkPredictor` -- non-graph models (``mlp``, ``lstm``,
  ``gru``) consuming concatenated sender/receiver/edge features per pair.

Both follow scikit-learn conventions: constructor stores hyperparameters
verbatim, ``fit`` learns state into trailing-underscore attributes, and
``get_params``/``set_params`` come from ``BaseEstimator``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import layers as nn
from .graph import TemporalWindow, NODE_FEATURES, EDGE_FEATURES
from .protocol import (
    TrainingDiverged,
    balance_indices,
    make_optimizer,
    metrics_from_scores,
)
from .validation import check_windows, check_is_fitted, ordered_pairs

SPATIAL_KINDS = ("none", "gcn", "gat", "gatv2", "gtc")
TEMPORAL_KINDS = ("none", "lstm", "gru")
BASELINE_KINDS = ("mlp", "lstm", "gru")

NODE_DIM = len(NODE_FEATURES)
EDGE_DIM = len(EDGE_FEATURES)
# per-step baseline vector: sender feats, receiver feats, mean edge feats, presence flag
PAIR_STEP_DIM = 2 * NODE_DIM + EDGE_DIM + 1

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture knobs; the ``paper`` preset mirrors the published scale,
    the default is the desk-scale preset used throughout the test suite."""

    spatial: str = "gtc"
    temporal: str = "lstm"
    spatial_layers: int = 2
    spatial_hidden: int = 64
    heads: int = 4
    embedding_dim: int = 64
    temporal_layers: int = 2
    temporal_hidden: int = 128
    mlp_hidden: tuple[int, ...] = (128,)
    dropout: float = 0.2
    threshold: float = 0.5
    attention_edge_features: bool = True

    def validate(self) -> "ModelConfig":
        if self.spatial not in SPATIAL_KINDS:
            raise ValueError(f"spatial must be one of {SPATIAL_KINDS}, got {self.spatial!r}")
        if self.temporal not in TEMPORAL_KINDS:
            raise ValueError(f"temporal must be one of {TEMPORAL_KINDS}, got {self.temporal!r}")
        if self.spatial == "none" and self.temporal == "none":
            raise ValueError("spatial and temporal encoders cannot both be 'none'")
        if self.spatial != "none" and self.spatial_hidden % self.heads:
            raise ValueError(
                f"spatial_hidden {self.spatial_hidden} must be divisible by heads {self.heads}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.temporal == "none" and self.spatial_hidden != self.embedding_dim:
            raise ValueError(
                "without a temporal encoder the spatial output is the embedding: "
                f"spatial_hidden {self.spatial_hidden} != embedding_dim {self.embedding_dim}"
            )
        return self

    @classmethod
    def paper_preset(cls, **overrides) -> "ModelConfig":
        base = dict(spatial_hidden=1024, heads=128, embedding_dim=1024,
                    temporal_hidden=2048, mlp_hidden=(2048,))
        base.update(overrides)
        return cls(**base)


@dataclass
class FeatureStats:
    """Per-feature z-score statistics, computed on the training split only."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    @classmethod
    def from_windows(cls, windows: Sequence[TemporalWindow]) -> "FeatureStats":
        seen: dict[int, object] = {}
        for win in windows:
            for snap in win.snapshots:
                seen.setdefault(id(snap), snap)
        node_rows, edge_rows = [], []
        for snap in seen.values():
            node_rows.extend((n.vx, n.vy) for n in snap.nodes)
            edge_rows.extend(
                (e.distance_m, e.path_loss_db, e.prop_delay_s, e.timestamp_s) for e in snap.edges
            )
        node = np.asarray(node_rows, dtype=np.float64).reshape(-1, NODE_DIM)
        edge = np.asarray(edge_rows, dtype=np.float64).reshape(-1, EDGE_DIM)
        return cls(
            node_mean=node.mean(axis=0) if len(node) else np.zeros(NODE_DIM),
            node_std=_safe_std(node, NODE_DIM),
            edge_mean=edge.mean(axis=0) if len(edge) else np.zeros(EDGE_DIM),
            edge_std=_safe_std(edge, EDGE_DIM),
        )

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            "norm.node_mean": self.node_mean,
            "norm.node_std": self.node_std,
            "norm.edge_mean": self.edge_mean,
            "norm.edge_std": self.edge_std,
        }


def _safe_std(arr: np.ndarray, width: int) -> np.ndarray:
    if not len(arr):
        return np.ones(width)
    std = arr.std(axis=0)
    return np.where(std > 1e-9, std, 1.0)


# ---------------------------------------------------------------------------
# prepared inputs: snapshots are shared between sliding windows, so each
# unique snapshot is converted (and normalized) exactly once per fit/predict.


@dataclass
class _GraphStep:
    node_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    efeat: np.ndarray


@dataclass
class _PreparedWindow:
    steps: list
    labels: np.ndarray
    pos_idx: np.ndarray
    neg_idx: np.ndarray


class _SnapshotCache:
    def __init__(self, stats: FeatureStats, n_nodes: int):
        self.stats = stats
        self.n_nodes = n_nodes
        self.pair_i, self.pair_j = ordered_pairs(n_nodes)
        self._pair_slot = np.full((n_nodes, n_nodes), -1, dtype=np.int64)
        self._pair_slot[self.pair_i, self.pair_j] = np.arange(self.pair_i.size)
        self._graph: dict[int, _GraphStep] = {}
        self._pairs: dict[int, np.ndarray] = {}

    def _raw_arrays(self, snap) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        node = np.array([(n.vx, n.vy) for n in snap.nodes], dtype=np.float64).reshape(-1, NODE_DIM)
        if snap.edges:
            src = np.fromiter((e.src for e in snap.edges), dtype=np.int64, count=len(snap.edges))
            dst = np.fromiter((e.dst for e in snap.edges), dtype=np.int64, count=len(snap.edges))
            feat = np.array(
                [(e.distance_m, e.path_loss_db, e.prop_delay_s, e.timestamp_s) for e in snap.edges],
                dtype=np.float64,
            )
        else:
            src = np.zeros(0, dtype=np.int64)
            dst = np.zeros(0, dtype=np.int64)
            feat = np.zeros((0, EDGE_DIM))
        return node, src, dst, feat

    def graph_step(self, snap) -> _GraphStep:
        cached = self._graph.get(id(snap))
        if cached is None:
            node, src, dst, feat = self._raw_arrays(snap)
            cached = _GraphStep(
                node_x=(node - self.stats.node_mean) / self.stats.node_std,
                src=src,
                dst=dst,
                efeat=(feat - self.stats.edge_mean) / self.stats.edge_std,
            )
            self._graph[id(snap)] = cached
        return cached

    def pair_step(self, snap) -> np.ndarray:
        """(n_pairs, PAIR_STEP_DIM) per-pair features with multi-edge means."""
        cached = self._pairs.get(id(snap))
        if cached is None:
            node, src, dst, feat = self._raw_arrays(snap)
            node_n = (node - self.stats.node_mean) / self.stats.node_std
            out = np.zeros((self.pair_i.size, PAIR_STEP_DIM))
            out[:, 0:NODE_DIM] = node_n[self.pair_i]
            out[:, NODE_DIM : 2 * NODE_DIM] = node_n[self.pair_j]
            if src.size:
                slots = self._pair_slot[src, dst]
                sums = np.zeros((self.pair_i.size, EDGE_DIM))
                counts = np.zeros(self.pair_i.size)
                np.add.at(sums, slots, feat)
                np.add.at(counts, slots, 1.0)
                present = counts > 0
                means = sums[present] / counts[present, None]
                out[present, 2 * NODE_DIM : 2 * NODE_DIM + EDGE_DIM] = (
                    means - self.stats.edge_mean
                ) / self.stats.edge_std
                out[present, -1] = 1.0
            self._pairs[id(snap)] = out
            cached = out
        return cached

    def prepare(self, windows, mode: str) -> list[_PreparedWindow]:
        prepared = []
        for win in windows:
            if mode == "graph":
                steps = [self.graph_step(s) for s in win.snapshots]
            else:
                steps = [self.pair_step(s) for s in win.snapshots]
            labels = win.labels[self.pair_i, self.pair_j].astype(np.float64)
            prepared.append(
                _PreparedWindow(
                    steps=steps,
                    labels=labels,
                    pos_idx=np.flatnonzero(labels == 1.0),
                    neg_idx=np.flatnonzero(labels == 0.0),
                )
            )
        return prepared


# ---------------------------------------------------------------------------
# network assemblies


class GraphWindowEncoder:
    """Spatial stack per snapshot, then a recurrent pass over the step sequence.

    The returned embedding is the final hidden state projected to the
    embedding width; with ``temporal='none'`` it is the last snapshot's
    spatial encoding, with ``spatial='none'`` the recurrence consumes raw
    node features.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.spatial: list = []
        in_dim = NODE_DIM
        if cfg.spatial != "none":
            for k in range(cfg.spatial_layers):
                kwargs = {}
                if cfg.spatial in ("gat", "gatv2"):
                    kwargs["use_edges"] = cfg.attention_edge_features
                self.spatial.append(
                    nn.make_spatial_layer(
                        cfg.spatial, f"spatial{k}", in_dim, EDGE_DIM,
                        cfg.spatial_hidden, cfg.heads, cfg.spatial_hidden, rng, **kwargs,
                    )
                )
                in_dim = cfg.spatial_hidden
        self.cells: list = []
        self.w_embed = None
        self.b_embed = None
        if cfg.temporal != "none":
            cell_cls = nn.RECURRENT_CELL_KINDS[cfg.temporal]
            for k in range(cfg.temporal_layers):
                self.cells.append(cell_cls(f"temporal{k}", in_dim, cfg.temporal_hidden, rng))
                in_dim = cfg.temporal_hidden
            self.w_embed = ad.Parameter(
                "embed.w", nn.glorot(rng, cfg.temporal_hidden, cfg.embedding_dim)
            )
            self.b_embed = ad.Parameter("embed.b", np.zeros(cfg.embedding_dim))

    def parameters(self) -> list[ad.Parameter]:
        params = [p for layer in self.spatial for p in layer.parameters()]
        params += [p for cell in self.cells for p in cell.parameters()]
        if self.w_embed is not None:
            params += [self.w_embed, self.b_embed]
        return params

    def _drop(self, x: ad.Tensor, train: bool, rng) -> ad.Tensor:
        p = self.cfg.dropout
        if not train or p <= 0.0:
            return x
        mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
        return ad.dropout(x, mask)

    def __call__(self, steps: Sequence[_GraphStep], train: bool = False, rng=None) -> ad.Tensor:
        encoded = []
        for step in steps:
            x = ad.Tensor(step.node_x)
            if self.spatial:
                efeat = ad.Tensor(step.efeat)
                last = len(self.spatial) - 1
                for k, layer in enumerate(self.spatial):
                    x = layer(x, step.src, step.dst, efeat)
                    if k < last:
                        x = ad.leaky_relu(x, nn.LEAKY_SLOPE)
                    x = self._drop(x, train, rng)
            encoded.append(x)
        if not self.cells:
            return encoded[-1]
        states = [cell.init_state(encoded[0].data.shape[0]) for cell in self.cells]
        for x in encoded:
            inp = x
            for k, cell in enumerate(self.cells):
                h, c = cell(inp, *states[k])
                states[k] = (h, c) if c is not None else (h,)
                inp = self._drop(h, train, rng) if k < len(self.cells) - 1 else h
        top = states[-1][0]
        return ad.add(ad.matmul(top, self.w_embed), self.b_embed)


class PairDecoder:
    """Scores an ordered pair from the concatenated endpoint embeddings."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.mlp = nn.MLP("decoder", 2 * cfg.embedding_dim, tuple(cfg.mlp_hidden), 1, rng)

    def parameters(self) -> list[ad.Parameter]:
        return self.mlp.parameters()

    def __call__(self, z: ad.Tensor, i_idx: np.ndarray, j_idx: np.ndarray,
                 train: bool = False, rng=None) -> ad.Tensor:
        pair_in = ad.concat(ad.gather_rows(z, i_idx), ad.gather_rows(z, j_idx), axis=1)
        masks = None
        if train and self.cfg.dropout > 0.0:
            masks = [
                (rng.random((i_idx.size, h)) >= self.cfg.dropout) / (1.0 - self.cfg.dropout)
                for h in self.cfg.mlp_hidden
            ]
        logits = self.mlp(pair_in, masks)
        return ad.sigmoid(ad.matmul(logits, ad.Tensor(np.ones(1))))


# ---------------------------------------------------------------------------
# estimators


class _LinkPredictorBase(BaseEstimator):
    """Shared training loop, prediction, metrics and persistence."""

    _mode = "graph"

    # -- hooks implemented by subclasses -------------------------------------
    def _build_network(self, rng: np.random.Generator) -> list[ad.Parameter]:
        raise NotImplementedError

    def _scores(self, prep: _PreparedWindow, sel: np.ndarray, train: bool, rng) -> ad.Tensor:
        raise NotImplementedError

    # -- scikit-learn style API ----------------------------------------------
    def fit(self, windows, val_windows=None):
        windows, w, n = check_windows(windows)
        self.window_ = w
        self.n_nodes_ = n
        self.stats_ = FeatureStats.from_windows(windows)
        cache = _SnapshotCache(self.stats_, n)
        train_prep = cache.prepare(windows, self._mode)
        val_prep = None
        if val_windows is not None:
            val_windows, _, _ = check_windows(val_windows, expect_w=w, expect_n=n)
            val_prep = cache.prepare(val_windows, self._mode)

        init_seq, train_seq = np.random.SeedSequence(self.random_state).spawn(2)
        self.params_ = self._build_network(np.random.default_rng(init_seq))
        names = [p.name for p in self.params_]
        if len(set(names)) != len(names):
            raise RuntimeError(f"duplicate parameter names in network: {names}")
        self._train(train_prep, val_prep, np.random.default_rng(train_seq))
        return self

    def _train(self, train_prep, val_prep, rng) -> None:
        optimizer = make_optimizer(self.optimizer, self.params_, self.learning_rate)
        history = {"train_loss": [], "val_loss": []}
        best_val = np.inf
        best_state = None
        bad_epochs = 0
        batch_size = max(1, int(self.batch_windows))

        for epoch in range(self.epochs):
            order = rng.permutation(len(train_prep))
            batch: list[tuple[_PreparedWindow, np.ndarray]] = []
            losses: list[float] = []
            batch_no = 0
            for pos, wi in enumerate(order):
                prep = train_prep[wi]
                if self.balance_classes:
                    sel = balance_indices(prep.pos_idx, prep.neg_idx, rng)
                    if sel is None:
                        continue  # window lacks one class this epoch; skip it
                else:
                    sel = np.arange(prep.labels.size)
                batch.append((prep, sel))
                if len(batch) < batch_size and pos != len(order) - 1:
                    continue
                batch_no += 1
                try:
                    loss_value = self._step(batch, optimizer, rng)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}: {exc}"
                    ) from exc
                if not np.isfinite(loss_value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch_no}")
                losses.append(loss_value)
                batch = []
            history["train_loss"].append(float(np.mean(losses)) if losses else np.nan)
            if val_prep is not None:
                val_loss = self._dataset_loss(val_prep)
                history["val_loss"].append(val_loss)
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_state = [p.data.copy() for p in self.params_]
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= self.patience:
                        break
        if best_state is not None:
            for p, data in zip(self.params_, best_state):
                p.data[...] = data
        self.history_ = history

    def _step(self, batch, optimizer, rng) -> float:
        with ad.Tape() as tape:
            total = None
            n_pairs = sum(sel.size for _, sel in batch)
            for prep, sel in batch:
                part = ad.scale(
                    ad.bce(self._scores(prep, sel, True, rng), prep.labels[sel]),
                    sel.size / n_pairs,
                )
                total = part if total is None else ad.add(total, part)
            tape.backward(total)
        optimizer.step()
        optimizer.zero_grad()
        return float(total.data)

    def _dataset_loss(self, prepared) -> float:
        total, count = 0.0, 0
        for prep in prepared:
            sel = np.arange(prep.labels.size)
            scores = self._scores(prep, sel, False, None)
            total += float(ad.bce(scores, prep.labels).data) * sel.size
            count += sel.size
        return total / count

    def _prepare_for_inference(self, windows):
        check_is_fitted(self)
        windows, _, _ = check_windows(windows, expect_w=self.window_, expect_n=self.n_nodes_)
        cache = _SnapshotCache(self.stats_, self.n_nodes_)
        return cache.prepare(windows, self._mode), cache

    def predict_proba(self, windows) -> np.ndarray:
        """Connectivity scores, shape (n_windows, N, N); diagonal fixed at 0."""
        prepared, cache = self._prepare_for_inference(windows)
        out = np.zeros((len(prepared), self.n_nodes_, self.n_nodes_))
        sel = np.arange(cache.pair_i.size)
        for k, prep in enumerate(prepared):
            scores = self._scores(prep, sel, False, None).data
            out[k, cache.pair_i, cache.pair_j] = scores
        return out

    def predict(self, windows) -> np.ndarray:
        """Binary decisions: 1 where score strictly exceeds the threshold."""
        return (self.predict_proba(windows) > self.threshold).astype(np.int8)

    def flat_scores(self, windows) -> tuple[np.ndarray, np.ndarray]:
        """(scores, labels) flattened over every ordered pair of every window."""
        prepared, cache = self._prepare_for_inference(windows)
        sel = np.arange(cache.pair_i.size)
        scores = np.concatenate([self._scores(p, sel, False, None).data for p in prepared])
        labels = np.concatenate([p.labels for p in prepared])
        return scores, labels

    def evaluate(self, windows):
        scores, labels = self.flat_scores(windows)
        return metrics_from_scores(scores, labels, self.threshold)

    def score(self, windows, y=None) -> float:
        return self.evaluate(windows).accuracy

    # -- persistence ----------------------------------------------------------
    def _sidecar(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "estimator": type(self).__name__,
            "params": _jsonable(self.get_params()),
            "window": self.window_,
            "n_nodes": self.n_nodes_,
        }

    def save(self, directory, provenance: dict | None = None) -> None:
        check_is_fitted(self)
        os.makedirs(directory, exist_ok=True)
        arrays = {p.name: p.data for p in self.params_}
        arrays.update(self.stats_.as_arrays())
        ad.save_checkpoint(
            os.path.join(directory, "model.ckpt"), arrays, meta=provenance or {}
        )
        sidecar = self._sidecar()
        sidecar["provenance"] = provenance or {}
        with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _restore(self, sidecar: dict, arrays: dict[str, np.ndarray]):
        self.window_ = int(sidecar["window"])
        self.n_nodes_ = int(sidecar["n_nodes"])
        self.stats_ = FeatureStats(
            node_mean=arrays.pop("norm.node_mean"),
            node_std=arrays.pop("norm.node_std"),
            edge_mean=arrays.pop("norm.edge_mean"),
            edge_std=arrays.pop("norm.edge_std"),
        )
        self.params_ = self._build_network(np.random.default_rng(0))
        by_name = {p.name: p for p in self.params_}
        if set(by_name) != set(arrays):
            missing = sorted(set(by_name) ^ set(arrays))
            raise ValueError(f"checkpoint does not match architecture; mismatched: {missing}")
        for name, data in arrays.items():
            if by_name[name].data.shape != data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{data.shape} vs {by_name[name].data.shape}"
                )
            by_name[name].data[...] = data
        self.history_ = {"train_loss": [], "val_loss": []}
        return self


class GraphLinkPredictor(_LinkPredictorBase):
    """Spatial-temporal graph encoder with a pairwise MLP decoder."""

    _mode = "graph"

    def __init__(self, spatial="gtc", temporal="lstm", spatial_layers=2, spatial_hidden=64,
                 heads=4, embedding_dim=64, temporal_layers=2, temporal_hidden=128,
                 mlp_hidden=(128,), dropout=0.2, threshold=0.5, attention_edge_features=True,
                 learning_rate=1e-3, epochs=20, batch_windows=1, optimizer="adam",
                 patience=5, balance_classes=True, random_state=0):
        self.spatial = spatial
        self.temporal = temporal
        self.spatial_layers = spatial_layers
        self.spatial_hidden = spatial_hidden
        self.heads = heads
        self.embedding_dim = embedding_dim
        self.temporal_layers = temporal_layers
        self.temporal_hidden = temporal_hidden
        self.mlp_hidden = mlp_hidden
        self.dropout = dropout
        self.threshold = threshold
        self.attention_edge_features = attention_edge_features
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_windows = batch_windows
        self.optimizer = optimizer
        self.patience = patience
        self.balance_classes = balance_classes
        self.random_state = random_state

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            spatial=self.spatial,
            temporal=self.temporal,
            spatial_layers=self.spatial_layers,
            spatial_hidden=self.spatial_hidden,
            heads=self.heads,
            embedding_dim=self.embedding_dim,
            temporal_layers=self.temporal_layers,
            temporal_hidden=self.temporal_hidden,
            mlp_hidden=tuple(self.mlp_hidden),
            dropout=self.dropout,
            threshold=self.threshold,
            attention_edge_features=self.attention_edge_features,
        ).validate()

    def _build_network(self, rng: np.random.Generator) -> list[ad.Parameter]:
        cfg = self.model_config()
        self.encoder_ = GraphWindowEncoder(cfg, rng)
        self.decoder_ = PairDecoder(cfg, rng)
        return self.encoder_.parameters() + self.decoder_.parameters()

    def _scores(self, prep, sel, train, rng) -> ad.Tensor:
        z = self.encoder_(prep.steps, train, rng)
        n = self.n_nodes_
        pair_i, pair_j = ordered_pairs(n)
        return self.decoder_(z, pair_i[sel], pair_j[sel], train, rng)

    def encode_window(self, window: TemporalWindow) -> np.ndarray:
        """Node embeddings (N, embedding_dim) for one window, eval mode."""
        prepared, _ = self._prepare_for_inference([window])
        return self.encoder_(prepared[0].steps, False, None).data

    def decode_pair(self, embeddings: np.ndarray, i: int, j: int) -> tuple[float, int]:
        """Score and thresholded decision for one ordered pair of embeddings."""
        check_is_fitted(self)
        z = ad.Tensor(embeddings)
        score = float(self.decoder_(z, np.array([i]), np.array([j]), False, None).data[0])
        return score, int(score > self.threshold)


class BaselineLinkPredictor(_LinkPredictorBase):
    """Non-graph baselines on concatenated per-pair feature vectors.

    ``mlp`` flattens the whole window into one vector; ``lstm``/``gru`` read
    the per-step vectors as a sequence.  A pair with no records at a step
    gets zero-filled edge features and a presence flag of 0.
    """

    _mode = "pairs"

    def __init__(self, kind="mlp", hidden=128, layers=2, mlp_hidden=(128,), dropout=0.2,
                 threshold=0.5, learning_rate=1e-3, epochs=20, batch_windows=1,
                 optimizer="adam", patience=5, balance_classes=True, random_state=0):
        self.kind = kind
        self.hidden = hidden
        self.layers = layers
        self.mlp_hidden = mlp_hidden
        self.dropout = dropout
        self.threshold = threshold
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_windows = batch_windows
        self.optimizer = optimizer
        self.patience = patience
        self.balance_classes = balance_classes
        self.random_state = random_state

    def _build_network(self, rng: np.random.Generator) -> list[ad.Parameter]:
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {self.kind!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.kind == "mlp":
            self.cells_ = []
            in_dim = self.window_ * PAIR_STEP_DIM
            self.head_ = nn.MLP("head", in_dim, (self.hidden, *self.mlp_hidden), 1, rng)
        else:
            cell_cls = nn.RECURRENT_CELL_KINDS[self.kind]
            self.cells_ = []
            in_dim = PAIR_STEP_DIM
            for k in range(self.layers):
                self.cells_.append(cell_cls(f"temporal{k}", in_dim, self.hidden, rng))
                in_dim = self.hidden
            self.head_ = nn.MLP("head", self.hidden, tuple(self.mlp_hidden), 1, rng)
        params = [p for cell in self.cells_ for p in cell.parameters()]
        return params + self.head_.parameters()

    def _head_masks(self, rows: int, rng):
        hidden = (self.hidden, *self.mlp_hidden) if self.kind == "mlp" else tuple(self.mlp_hidden)
        return [(rng.random((rows, h)) >= self.dropout) / (1.0 - self.dropout) for h in hidden]

    def _scores(self, prep, sel, train, rng) -> ad.Tensor:
        use_drop = train and self.dropout > 0.0
        if self.kind == "mlp":
            flat = np.concatenate([step[sel] for step in prep.steps], axis=1)
            x = ad.Tensor(flat)
            logits = self.head_(x, self._head_masks(sel.size, rng) if use_drop else None)
        else:
            states = [cell.init_state(sel.size) for cell in self.cells_]
            for step in prep.steps:
                inp = ad.Tensor(step[sel])
                for k, cell in enumerate(self.cells_):
                    h, c = cell(inp, *states[k])
                    states[k] = (h, c) if c is not None else (h,)
                    if k < len(self.cells_) - 1 and use_drop:
                        mask = (rng.random(h.data.shape) >= self.dropout) / (1.0 - self.dropout)
                        inp = ad.dropout(h, mask)
                    else:
                        inp = h
            logits = self.head_(states[-1][0], self._head_masks(sel.size, rng) if use_drop else None)
        return ad.sigmoid(ad.matmul(logits, ad.Tensor(np.ones(1))))


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def make_model(name: str, **overrides):
    """Build an estimator from a model string such as ``gtc-lstm`` or ``mlp``.

    Single graph kinds (``gcn``..``gtc``) are spatial-only; ``mlp``/``lstm``/
    ``gru`` are the non-graph baselines; ``<spatial>-<temporal>`` composes the
    full encoder.
    """
    name = name.lower()
    if name in BASELINE_KINDS:
        return BaselineLinkPredictor(kind=name, **overrides)
    if name in SPATIAL_KINDS and name != "none":
        return GraphLinkPredictor(spatial=name, temporal="none", **overrides)
    if "-" in name:
        spatial, _, temporal = name.partition("-")
        if spatial in SPATIAL_KINDS and temporal in TEMPORAL_KINDS:
            return GraphLinkPredictor(spatial=spatial, temporal=temporal, **overrides)
    raise ValueError(
        f"unknown model {name!r}; expected one of {BASELINE_KINDS}, a spatial kind, "
        "or '<spatial>-<temporal>'"
    )


def _random_micro_graph(rng: np.random.Generator, n: int):
    src, dst = [], []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.7:
                src.append(i)
                dst.append(j)
                if rng.random() < 0.4:  # keep a multi-edge in the mix
                    src.append(i)
                    dst.append(j)
    return _GraphStep(
        node_x=rng.normal(size=(n, NODE_DIM)),
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        efeat=rng.normal(size=(len(src), EDGE_DIM)),
    )


def gradient_check_suite(sample_per_param: int = 12, seed: int = 0) -> dict[str, float]:
    """Finite-difference validation of every layer kind plus the composed model.

    Small layers are checked on every parameter entry; the desk-width composed
    encoder/decoder samples ``sample_per_param`` entries per parameter to stay
    inside a one-minute budget.  Returns max relative error per check.
    """
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}

    step = _random_micro_graph(rng, 5)
    for kind in ("gcn", "gat", "gatv2", "gtc"):
        layer = nn.make_spatial_layer(kind, f"chk_{kind}", NODE_DIM, EDGE_DIM, 4, 2, 3, rng)

        def f(layer=layer):
            out = layer(ad.Tensor(step.node_x), step.src, step.dst, ad.Tensor(step.efeat))
            return ad.sum_all(ad.tanh(out))

        results[kind] = ad.grad_check(f, layer.parameters(), eps=1e-5)

    xs = [rng.normal(size=(3, 4)) for _ in range(2)]
    for kind in ("lstm", "gru"):
        cell = nn.RECURRENT_CELL_KINDS[kind](f"chk_{kind}", 4, 4, rng)

        def f(cell=cell):
            state = cell.init_state(3)
            for x in xs:
                h, c = cell(ad.Tensor(x), *state)
                state = (h, c) if c is not None else (h,)
            return ad.sum_all(ad.tanh(state[0]))

        results[kind] = ad.grad_check(f, cell.parameters(), eps=1e-5)

    tiny = ModelConfig(spatial_hidden=4, heads=2, embedding_dim=4,
                       temporal_hidden=4, mlp_hidden=(4,)).validate()
    decoder = PairDecoder(tiny, rng)
    z = rng.normal(size=(4, tiny.embedding_dim))
    pi = np.array([0, 1, 2, 3])
    pj = np.array([1, 2, 3, 0])
    labels = rng.integers(0, 2, size=4).astype(float)

    def f_dec():
        return ad.bce(decoder(ad.Tensor(z), pi, pj, False, None), labels)

    results["decoder"] = ad.grad_check(f_dec, decoder.parameters(), eps=1e-5)

    # composed model at desk widths: 3 nodes, window of 2
    desk = ModelConfig().validate()
    encoder = GraphWindowEncoder(desk, rng)
    head = PairDecoder(desk, rng)
    steps = [_random_micro_graph(rng, 3) for _ in range(2)]
    mi, mj = ordered_pairs(3)
    micro_labels = rng.integers(0, 2, size=mi.size).astype(float)

    def f_full():
        embeddings = encoder(steps, False, None)
        return ad.bce(head(embeddings, mi, mj, False, None), micro_labels)

    results["composed_gtc_lstm"] = ad.grad_check(
        f_full, encoder.parameters() + head.parameters(), eps=1e-5,
        sample_per_param=sample_per_param, rng=rng,
    )
    return results


def load_model(directory):
    """Rebuild a saved estimator from its checkpoint and config sidecar."""
    with open(os.path.join(directory, "model.json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    arrays, _ = ad.load_checkpoint(os.path.join(directory, "model.ckpt"))
    classes = {cls.__name__: cls for cls in (GraphLinkPredictor, BaselineLinkPredictor)}
    try:
        cls = classes[sidecar["estimator"]]
    except KeyError:
        raise ValueError(f"unknown estimator {sidecar.get('estimator')!r} in sidecar") from None
    params = dict(sidecar["params"])
    if "mlp_hidden" in params:
        params["mlp_hidden"] = tuple(params["mlp_hidden"])
    est = cls(**params)
    return est._restore(sidecar, dict(arrays))
