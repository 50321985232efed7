"""Tactical mobile-network dataset synthesis and next-state link prediction.

The package pairs a seeded mobility/propagation simulator with a family of
spatial-temporal graph models (and non-graph baselines) that predict whether
each ordered node pair will be connected one second into the future.
"""

from .graph import (
    NodeState,
    EdgeRecord,
    Snapshot,
    TemporalWindow,
    DatasetStats,
    label_connectivity,
    build_windows,
    hop_counts,
    dataset_stats,
    save_snapshots,
    load_snapshots,
)
from .mobility import SimConfig, path_loss_db, crossover_distance_m, simulate
from .models import ModelConfig, GraphLinkPredictor, BaselineLinkPredictor, make_model, load_model
from .protocol import (
    SplitConfig,
    TrainConfig,
    MetricsReport,
    PairBatch,
    split_windows,
    balance,
    evaluate_model,
    run_ablation,
)

__version__ = "0.1.0"

__all__ = [
    "NodeState",
    "EdgeRecord",
    "Snapshot",
    "TemporalWindow",
    "DatasetStats",
    "label_connectivity",
    "build_windows",
    "hop_counts",
    "dataset_stats",
    "save_snapshots",
    "load_snapshots",
    "SimConfig",
    "path_loss_db",
    "crossover_distance_m",
    "simulate",
    "ModelConfig",
    "GraphLinkPredictor",
    "BaselineLinkPredictor",
    "make_model",
    "load_model",
    "SplitConfig",
    "TrainConfig",
    "MetricsReport",
    "PairBatch",
    "split_windows",
    "balance",
    "evaluate_model",
    "run_ablation",
    "__version__",
]
