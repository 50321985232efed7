"""Experimental protocol: splits, class balancing, metrics, ablation grid.

Splits are random at window granularity (windows are the sample unit), sized
by floor allocation with the remainder going to training.  Balancing
downsamples the larger class to the smaller one and is re-drawn every epoch;
validation and test sets always keep every pair.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; message carries epoch/batch coordinates."""


@dataclass
class SplitConfig:
    ratios: tuple[int, int, int] = (90, 5, 5)
    rng_seed: int = 0


@dataclass
class TrainConfig:
    """Loop knobs; the published-scale preset keeps the 1e-6 learning rate."""

    learning_rate: float = 1e-3
    epochs: int = 20
    batch_windows: int = 1
    optimizer: str = "adam"
    patience: int = 5
    rng_seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        return self

    @classmethod
    def paper_preset(cls, **overrides) -> "TrainConfig":
        base = dict(learning_rate=1e-6, epochs=20)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_windows(n_windows: int, config: SplitConfig | None = None) -> SplitIndices:
    """Deterministic disjoint/exhaustive partition of window indices.

    Floor allocation for val/test, remainder to train; below 20 windows the
    tail splits would be degenerate, so that is an error.
    """
    config = config or SplitConfig()
    if sum(config.ratios) != 100:
        raise ValueError(f"split ratios must sum to 100, got {config.ratios}")
    if n_windows < 20:
        raise ValueError(f"need at least 20 windows to split, got {n_windows}")
    _, r_val, r_test = config.ratios
    n_val = (n_windows * r_val) // 100
    n_test = (n_windows * r_test) // 100
    order = np.random.default_rng(config.rng_seed).permutation(n_windows)
    n_train = n_windows - n_val - n_test
    return SplitIndices(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train : n_train + n_val]),
        test=np.sort(order[n_train + n_val :]),
    )


@dataclass
class PairBatch:
    """Ordered pairs with labels; ``features`` rides along for baseline models."""

    i: np.ndarray
    j: np.ndarray
    label: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.i) == len(self.j) == len(self.label)):
            raise ValueError("pair batch arrays must share a length")
        if (np.asarray(self.i) == np.asarray(self.j)).any():
            raise ValueError("pair batch contains a self-pair")

    def take(self, idx: np.ndarray) -> "PairBatch":
        return PairBatch(
            i=np.asarray(self.i)[idx],
            j=np.asarray(self.j)[idx],
            label=np.asarray(self.label)[idx],
            features=None if self.features is None else np.asarray(self.features)[idx],
        )


def balance_indices(pos_idx: np.ndarray, neg_idx: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray | None:
    """Equal-count subsample of both classes, or None when a class is empty."""
    if pos_idx.size == 0 or neg_idx.size == 0:
        return None
    m = min(pos_idx.size, neg_idx.size)
    pos = pos_idx if pos_idx.size == m else rng.choice(pos_idx, size=m, replace=False)
    neg = neg_idx if neg_idx.size == m else rng.choice(neg_idx, size=m, replace=False)
    return np.concatenate([pos, neg])


def balance(batch: PairBatch, rng: np.random.Generator | None = None) -> PairBatch:
    """Downsample the larger class (without replacement) to the smaller one.

    Training-time only; evaluation keeps every sample.  An empty class is an
    error naming which side is missing.
    """
    label = np.asarray(batch.label)
    pos_idx = np.flatnonzero(label == 1)
    neg_idx = np.flatnonzero(label == 0)
    if pos_idx.size == 0:
        raise ValueError("cannot balance: positive class is empty")
    if neg_idx.size == 0:
        raise ValueError("cannot balance: negative class is empty")
    sel = balance_indices(pos_idx, neg_idx, rng or np.random.default_rng(0))
    return batch.take(np.sort(sel))


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "MetricsReport":
        total = tp + fp + fn + tn
        flags = []
        accuracy = (tp + tn) / total if total else 0.0
        if not total:
            flags.append("empty")
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision, flags = 0.0, flags + ["precision_zero_denominator"]
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall, flags = 0.0, flags + ["recall_zero_denominator"]
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1, flags = 0.0, flags + ["f1_zero_denominator"]
        return cls(tp, fp, fn, tn, accuracy, precision, recall, f1, tuple(flags))


def metrics_from_scores(scores: np.ndarray, labels: np.ndarray, threshold: float) -> MetricsReport:
    """Confusion counts from raw scores; decision is strictly score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    decided = scores > threshold
    truth = labels == 1
    tp = int(np.count_nonzero(decided & truth))
    fp = int(np.count_nonzero(decided & ~truth))
    fn = int(np.count_nonzero(~decided & truth))
    tn = int(np.count_nonzero(~decided & ~truth))
    return MetricsReport.from_counts(tp, fp, fn, tn)


def evaluate_model(model, windows) -> MetricsReport:
    """Counts over all ordered pairs of all given windows at the model threshold."""
    return model.evaluate(windows)


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params: Sequence[ad.Parameter], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    """Adaptive moments with the standard defaults."""

    def __init__(self, params: Sequence[ad.Parameter], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in enumerate(self.params):
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


OPTIMIZER_KINDS = {"adam": Adam, "sgd": SGD}


def make_optimizer(kind: str, params: Sequence[ad.Parameter], lr: float):
    try:
        cls = OPTIMIZER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZER_KINDS)}") from None
    return cls(params, lr)


# ---------------------------------------------------------------------------
# ablation grid


ABLATION_SPATIAL = ("gcn", "gat", "gatv2", "gtc")
ABLATION_TEMPORAL = ("none", "gru", "lstm")


@dataclass
class AblationCell:
    spatial: str
    temporal: str
    metrics: MetricsReport | None
    error: str | None = None

    @property
    def name(self) -> str:
        label = self.spatial.upper().replace("V2", "v2")
        if self.temporal != "none":
            label += f"-{self.temporal.upper()}"
        return label


@dataclass
class AblationGrid:
    cells: list[AblationCell] = field(default_factory=list)

    def mean_accuracy(self, temporal_filter) -> float:
        accs = [c.metrics.accuracy for c in self.cells
                if c.metrics is not None and temporal_filter(c.temporal)]
        return float(np.mean(accs)) if accs else float("nan")

    def to_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            row = {"encoder": c.name, "spatial": c.spatial, "temporal": c.temporal}
            if c.metrics is not None:
                row.update(
                    tp=c.metrics.tp, fp=c.metrics.fp, fn=c.metrics.fn, tn=c.metrics.tn,
                    accuracy=c.metrics.accuracy, precision=c.metrics.precision,
                    recall=c.metrics.recall, f1=c.metrics.f1, status="ok",
                )
            else:
                row.update(tp="", fp="", fn="", tn="", accuracy="", precision="",
                           recall="", f1="", status=f"failed: {c.error}")
            rows.append(row)
        return rows

    def format_table(self) -> str:
        lines = [f"{'Encoder':<12} {'Accuracy':>9} {'F1-score':>9}"]
        for c in self.cells:
            if c.metrics is not None:
                lines.append(f"{c.name:<12} {c.metrics.accuracy:>9.3f} {c.metrics.f1:>9.3f}")
            else:
                lines.append(f"{c.name:<12} {'failed':>9} {'':>9}")
        return "\n".join(lines)


def run_ablation(
    windows,
    split: SplitIndices,
    train_config: TrainConfig | None = None,
    model_overrides: dict | None = None,
    spatial_kinds: Sequence[str] = ABLATION_SPATIAL,
    temporal_kinds: Sequence[str] = ABLATION_TEMPORAL,
    progress=None,
) -> AblationGrid:
    """Train/evaluate every encoder combination with identical seeds and budget.

    A failing cell is recorded with its error and the grid still completes.
    """
    from .models import GraphLinkPredictor  # deferred: models imports this module

    cfg = (train_config or TrainConfig()).validate()
    windows = list(windows)
    train_w = [windows[k] for k in split.train]
    val_w = [windows[k] for k in split.val]
    test_w = [windows[k] for k in split.test]
    grid = AblationGrid()
    for spatial in spatial_kinds:
        for temporal in temporal_kinds:
            overrides = dict(model_overrides or {})
            if temporal == "none":
                # spatial-only cells expose the spatial output directly
                overrides.setdefault("embedding_dim", overrides.get("spatial_hidden", 64))
                overrides.setdefault("spatial_hidden", overrides["embedding_dim"])
            model = GraphLinkPredictor(
                spatial=spatial,
                temporal=temporal,
                learning_rate=cfg.learning_rate,
                epochs=cfg.epochs,
                batch_windows=cfg.batch_windows,
                optimizer=cfg.optimizer,
                patience=cfg.patience,
                random_state=cfg.rng_seed,
                **overrides,
            )
            if progress is not None:
                progress(f"{spatial}-{temporal}")
            try:
                model.fit(train_w, val_windows=val_w)
                cell = AblationCell(spatial, temporal, model.evaluate(test_w))
            except Exception as exc:  # cell failure must not sink the grid
                cell = AblationCell(spatial, temporal, None, error=str(exc))
            grid.cells.append(cell)
    return grid


# ---------------------------------------------------------------------------
# report files


def write_csv(path, rows: list[dict], header_comments: Sequence[str] = ()) -> None:
    """CSV with optional leading ``#`` provenance lines; formatting is fixed so
    identical inputs produce identical bytes."""
    if not rows:
        raise ValueError("no rows to write")
    buf = io.StringIO()
    for comment in header_comments:
        buf.write(f"# {comment}\n")
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def metrics_row(name: str, window: int, report: MetricsReport) -> dict:
    return {
        "model": name,
        "window": window,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "tn": report.tn,
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "flags": ";".join(report.flags),
    }
