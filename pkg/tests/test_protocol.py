import numpy as np
import pytest

from linkcast.graph import EdgeRecord, NodeState, Snapshot, build_windows
from linkcast.models import BaselineLinkPredictor, GraphLinkPredictor
from linkcast.protocol import (
    MetricsReport,
    PairBatch,
    SplitConfig,
    TrainConfig,
    TrainingDiverged,
    balance,
    balance_indices,
    metrics_from_scores,
    metrics_row,
    run_ablation,
    split_windows,
    write_csv,
)

from test_models import small_windows


def test_split_4000_windows():
    s = split_windows(4000, SplitConfig(rng_seed=1))
    assert (len(s.train), len(s.val), len(s.test)) == (3600, 200, 200)


def test_split_floor_with_remainder_to_train():
    # floor(21 * 0.05) = 1 for each tail split, remainder stays in training
    s = split_windows(21, SplitConfig(rng_seed=2))
    assert (len(s.train), len(s.val), len(s.test)) == (19, 1, 1)


def test_split_deterministic_disjoint_exhaustive():
    a = split_windows(137, SplitConfig(rng_seed=9))
    b = split_windows(137, SplitConfig(rng_seed=9))
    np.testing.assert_array_equal(a.train, b.train)
    np.testing.assert_array_equal(a.val, b.val)
    np.testing.assert_array_equal(a.test, b.test)
    merged = np.concatenate([a.train, a.val, a.test])
    assert len(merged) == 137
    assert len(np.unique(merged)) == 137
    c = split_windows(137, SplitConfig(rng_seed=10))
    assert not np.array_equal(a.train, c.train)


def test_split_guards():
    with pytest.raises(ValueError, match="at least 20"):
        split_windows(19)
    with pytest.raises(ValueError, match="sum to 100"):
        split_windows(100, SplitConfig(ratios=(80, 10, 5)))


def test_balance_downsamples_larger_class(rng):
    batch = PairBatch(
        i=np.repeat(np.arange(500), 1),
        j=np.repeat(np.arange(500), 1) + 1,
        label=np.concatenate([np.ones(100), np.zeros(400)]),
    )
    out = balance(batch, rng)
    assert len(out.label) == 200
    assert (out.label == 1).sum() == 100
    assert (out.label == 0).sum() == 100


def test_balance_keeps_balanced_batch(rng):
    batch = PairBatch(i=np.arange(10), j=np.arange(10) + 1,
                      label=np.array([0, 1] * 5))
    out = balance(batch, rng)
    assert sorted(out.label) == sorted(batch.label)


def test_balance_errors_name_empty_class(rng):
    ones = PairBatch(i=np.arange(4), j=np.arange(4) + 1, label=np.ones(4))
    with pytest.raises(ValueError, match="negative class is empty"):
        balance(ones, rng)
    zeros = PairBatch(i=np.arange(4), j=np.arange(4) + 1, label=np.zeros(4))
    with pytest.raises(ValueError, match="positive class is empty"):
        balance(zeros, rng)


def test_balance_redraw_differs_between_epochs():
    pos = np.arange(100)
    neg = np.arange(100, 600)
    rng = np.random.default_rng(0)
    first = balance_indices(pos, neg, rng)
    second = balance_indices(pos, neg, rng)
    assert not np.array_equal(first, second)
    for sel in (first, second):
        assert (sel < 100).sum() == (sel >= 100).sum() == 100


def test_metrics_hand_case():
    report = MetricsReport.from_counts(tp=3, fp=1, fn=1, tn=5)
    assert report.accuracy == 0.8
    assert report.precision == 0.75
    assert report.recall == 0.75
    assert report.f1 == 0.75
    assert report.flags == ()


def test_metrics_perfect_and_degenerate():
    perfect = metrics_from_scores(np.array([0.9, 0.1]), np.array([1, 0]), 0.5)
    assert (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1) == (1, 1, 1, 1)

    all_positive = metrics_from_scores(np.full(10, 0.9), np.array([1] * 5 + [0] * 5), 0.5)
    assert all_positive.recall == 1.0
    assert all_positive.accuracy == 0.5

    no_predictions = metrics_from_scores(np.zeros(4), np.zeros(4), 0.5)
    assert no_predictions.precision == 0.0
    assert "precision_zero_denominator" in no_predictions.flags
    assert "recall_zero_denominator" in no_predictions.flags


def test_metrics_threshold_strictly_greater():
    report = metrics_from_scores(np.array([0.5]), np.array([1]), 0.5)
    assert report.fn == 1 and report.tp == 0


def test_metrics_match_brute_force(rng):
    scores = rng.random(500)
    labels = rng.integers(0, 2, size=500)
    report = metrics_from_scores(scores, labels, 0.5)
    tp = fp = fn = tn = 0
    for s, y in zip(scores, labels):
        d = 1 if s > 0.5 else 0
        tp += d and y
        fp += d and not y
        fn += (not d) and y
        tn += (not d) and (not y)
    assert (report.tp, report.fp, report.fn, report.tn) == (tp, fp, fn, tn)
    assert report.accuracy == (tp + tn) / 500


def test_zero_learning_rate_changes_nothing():
    windows = small_windows()
    est = GraphLinkPredictor(spatial_hidden=8, heads=2, embedding_dim=8,
                             temporal_hidden=8, mlp_hidden=(8,),
                             learning_rate=0.0, epochs=3, random_state=5)
    est.fit(windows[:10])
    before = [p.data.copy() for p in est.params_]
    scores_before, _ = est.flat_scores(windows[10:12])
    est._train(  # second full pass at lr 0 must be a no-op as well
        est._prepare_for_inference(windows[:10])[0], None, np.random.default_rng(0)
    )
    for p, b in zip(est.params_, before):
        np.testing.assert_array_equal(p.data, b)
    scores_after, _ = est.flat_scores(windows[10:12])
    assert scores_before.tobytes() == scores_after.tobytes()


def _separable_windows(n_steps=40, n=4, seed=0):
    # labels follow the sign of the (z-scored) distance feature at the previous
    # step: a logistic model on one feature solves this exactly
    rng = np.random.default_rng(seed)
    snaps = []
    prev_d = None
    for t in range(n_steps):
        d = rng.uniform(0.0, 100.0, size=(n, n))
        edges = []
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if prev_d is None:
                    loss = 100.0
                else:
                    loss = 100.0 if prev_d[i, j] < 50.0 else 200.0
                edges.append(EdgeRecord(i, j, float(d[i, j]), loss, 1e-6, 0.5))
        nodes = tuple(NodeState(k, 0.0, 0.0, 0.0, 0.0) for k in range(n))
        snaps.append(Snapshot(t, nodes, tuple(edges)))
        prev_d = d
    return build_windows(snaps, 1)


def test_separable_toy_reaches_high_accuracy():
    windows = _separable_windows()
    est = BaselineLinkPredictor(kind="mlp", hidden=16, mlp_hidden=(8,),
                                epochs=20, learning_rate=1e-2, random_state=0)
    est.fit(windows[:30], val_windows=windows[30:])
    assert est.score(windows[30:]) >= 0.99
    history = est.history_["train_loss"]
    assert history[-1] < history[0]


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_training_divergence_reports_coordinates():
    windows = small_windows()
    est = GraphLinkPredictor(spatial_hidden=8, heads=2, embedding_dim=8,
                             temporal_hidden=8, mlp_hidden=(8,),
                             learning_rate=1e200, epochs=3, random_state=0)
    with pytest.raises(TrainingDiverged, match=r"epoch \d+, batch \d+"):
        est.fit(windows[:8])


def test_train_config_presets():
    assert TrainConfig().validate().learning_rate == 1e-3
    paper = TrainConfig.paper_preset()
    assert paper.learning_rate == 1e-6
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0).validate()


def test_write_csv_is_deterministic(tmp_path):
    rows = [metrics_row("gtc-lstm", 5, MetricsReport.from_counts(3, 1, 1, 5))]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, rows, header_comments=["command: test", "seed: 0"])
    write_csv(b, rows, header_comments=["command: test", "seed: 0"])
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.startswith("# command: test\n# seed: 0\n")
    assert "0.8" in text


def test_ablation_grid_small():
    windows = small_windows(n_steps=26, w=2)
    split = split_windows(len(windows), SplitConfig(rng_seed=0))
    grid = run_ablation(
        windows,
        split,
        TrainConfig(epochs=1, rng_seed=0),
        model_overrides=dict(spatial_hidden=8, heads=2, embedding_dim=8,
                             temporal_hidden=8, mlp_hidden=(8,)),
        spatial_kinds=("gcn", "gtc"),
        temporal_kinds=("none", "lstm"),
    )
    assert len(grid.cells) == 4
    names = [c.name for c in grid.cells]
    assert names == ["GCN", "GCN-LSTM", "GTC", "GTC-LSTM"]
    assert all(c.metrics is not None for c in grid.cells)
    table = grid.format_table()
    assert "GTC-LSTM" in table
    rows = grid.to_rows()
    assert rows[0]["status"] == "ok"


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_ablation_records_cell_failures():
    windows = small_windows(n_steps=26, w=2)
    split = split_windows(len(windows), SplitConfig(rng_seed=0))
    grid = run_ablation(
        windows,
        split,
        TrainConfig(epochs=1, learning_rate=1e200, rng_seed=0),
        model_overrides=dict(spatial_hidden=8, heads=2, embedding_dim=8,
                             temporal_hidden=8, mlp_hidden=(8,)),
        spatial_kinds=("gtc",),
        temporal_kinds=("lstm",),
    )
    assert len(grid.cells) == 1
    assert grid.cells[0].metrics is None
    assert "non-finite" in grid.cells[0].error
