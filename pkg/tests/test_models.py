import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from linkcast import autodiff as ad
from linkcast.graph import EdgeRecord, NodeState, Snapshot, build_windows
from linkcast.mobility import SimConfig, simulate
from linkcast.models import (
    BaselineLinkPredictor,
    GraphLinkPredictor,
    GraphWindowEncoder,
    ModelConfig,
    _GraphStep,
    load_model,
    make_model,
)

TINY = dict(spatial_hidden=8, heads=2, embedding_dim=8, temporal_hidden=8,
            mlp_hidden=(8,), epochs=2, random_state=0)


def small_windows(n_steps=30, w=2, n_nodes=6, seed=0, mobility="grouped"):
    cfg = SimConfig(n_nodes=n_nodes, n_steps=n_steps, mobility=mobility,
                    ht_m=0.3, hr_m=0.3, arena_m=900.0, n_groups=2,
                    group_radius_m=120.0, messages_per_pair_rate=2.5, rng_seed=seed)
    return build_windows(simulate(cfg), w)


def permute_window_inputs(window, perm):
    snaps = []
    for s in window.snapshots:
        nodes = tuple(sorted(
            (NodeState(int(perm[n.id]), n.x, n.y, n.vx, n.vy) for n in s.nodes),
            key=lambda n: n.id,
        ))
        edges = tuple(
            EdgeRecord(int(perm[e.src]), int(perm[e.dst]), e.distance_m,
                       e.path_loss_db, e.prop_delay_s, e.timestamp_s)
            for e in s.edges
        )
        snaps.append(Snapshot(s.t, nodes, edges))
    labels = np.zeros_like(np.asarray(window.labels))
    labels[np.ix_(perm, perm)] = window.labels
    from linkcast.graph import TemporalWindow

    return TemporalWindow(tuple(snaps), labels, window.t_target)


def test_model_config_validation():
    with pytest.raises(ValueError, match="spatial"):
        ModelConfig(spatial="cnn").validate()
    with pytest.raises(ValueError, match="both"):
        ModelConfig(spatial="none", temporal="none").validate()
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(spatial_hidden=30, heads=4).validate()
    with pytest.raises(ValueError, match="embedding"):
        ModelConfig(temporal="none", spatial_hidden=64, embedding_dim=32).validate()
    paper = ModelConfig.paper_preset().validate()
    assert paper.spatial_hidden == 1024 and paper.heads == 128
    assert paper.temporal_hidden == 2048 and paper.embedding_dim == 1024


def test_make_model_parses_names():
    assert isinstance(make_model("mlp"), BaselineLinkPredictor)
    assert make_model("gru").kind == "gru"
    spatial_only = make_model("gatv2")
    assert isinstance(spatial_only, GraphLinkPredictor)
    assert spatial_only.temporal == "none"
    combo = make_model("gcn-gru")
    assert (combo.spatial, combo.temporal) == ("gcn", "gru")
    with pytest.raises(ValueError, match="unknown model"):
        make_model("resnet")


def test_unfitted_estimator_raises():
    with pytest.raises(NotFittedError):
        GraphLinkPredictor().predict(small_windows(n_steps=5))


def test_sklearn_param_round_trip():
    est = GraphLinkPredictor(spatial="gat", epochs=3)
    params = est.get_params()
    assert params["spatial"] == "gat" and params["epochs"] == 3
    est.set_params(epochs=7)
    assert est.epochs == 7


@pytest.mark.parametrize("spatial,temporal", [
    ("gtc", "lstm"), ("gcn", "gru"), ("gat", "none"), ("none", "lstm"),
])
def test_graph_estimator_fit_predict_shapes(spatial, temporal):
    windows = small_windows()
    overrides = dict(TINY)
    if temporal == "none":
        overrides["embedding_dim"] = overrides["spatial_hidden"]
    est = GraphLinkPredictor(spatial=spatial, temporal=temporal, **overrides)
    est.fit(windows[:20], val_windows=windows[20:24])
    proba = est.predict_proba(windows[24:28])
    assert proba.shape == (4, 6, 6)
    assert np.diagonal(proba, axis1=1, axis2=2).sum() == 0
    assert ((proba >= 0) & (proba <= 1)).all()
    decided = est.predict(windows[24:28])
    np.testing.assert_array_equal(decided, (proba > 0.5).astype(np.int8))
    report = est.evaluate(windows[24:28])
    assert report.tp + report.fp + report.fn + report.tn == 4 * 6 * 5


@pytest.mark.parametrize("kind", ["mlp", "lstm", "gru"])
def test_baseline_estimator_fit_predict(kind):
    windows = small_windows(w=3)
    est = BaselineLinkPredictor(kind=kind, hidden=8, mlp_hidden=(8,), epochs=2)
    est.fit(windows[:16], val_windows=windows[16:20])
    proba = est.predict_proba(windows[20:23])
    assert proba.shape == (3, 6, 6)
    assert est.score(windows[20:23]) >= 0.0


def test_decision_threshold_is_strict():
    windows = small_windows()
    est = GraphLinkPredictor(**TINY).fit(windows[:12])
    for p in est.decoder_.parameters():
        p.data[...] = 0.0
    emb = est.encode_window(windows[0])
    score, decision = est.decode_pair(emb, 0, 1)
    assert score == 0.5
    assert decision == 0  # strictly-greater rule: 0.5 is not > 0.5
    scores, _ = est.flat_scores(windows[:2])
    np.testing.assert_allclose(scores, 0.5)
    loss = ad.bce(ad.Tensor(scores), np.zeros_like(scores))
    assert abs(float(loss.data) - 0.6931471805599453) < 1e-12


def test_encode_window_without_temporal_is_last_spatial_state():
    windows = small_windows(w=3)
    est = GraphLinkPredictor(spatial="gtc", temporal="none", spatial_hidden=8,
                             heads=2, embedding_dim=8, mlp_hidden=(8,),
                             epochs=1, random_state=1)
    est.fit(windows[:12])
    window = windows[12]
    full = est.encode_window(window)
    # feeding only the final snapshot through the spatial stack must match
    prepared, _ = est._prepare_for_inference([window])
    last_only = est.encoder_([prepared[0].steps[-1]], False, None).data
    np.testing.assert_allclose(full, last_only, atol=1e-12)


def test_encoder_permutation_equivariance():
    rng = np.random.default_rng(3)
    windows = small_windows(w=2)
    perm = rng.permutation(6)
    for spatial in ("gcn", "gat", "gatv2", "gtc"):
        est = GraphLinkPredictor(spatial=spatial, **TINY)
        est.fit(windows[:10])
        window = windows[11]
        base = est.encode_window(window)
        permuted = est.encode_window(permute_window_inputs(window, perm))
        np.testing.assert_allclose(permuted[perm], base, atol=1e-10)


def test_isolated_node_does_not_disturb_others():
    rng = np.random.default_rng(4)
    cfg = ModelConfig(spatial_hidden=8, heads=2, embedding_dim=8, temporal_hidden=8)
    encoder = GraphWindowEncoder(cfg, rng)
    n, e = 5, 7
    steps, steps_plus = [], []
    for _ in range(2):
        src = rng.integers(0, n, size=e)
        dst = (src + 1 + rng.integers(0, n - 1, size=e)) % n
        node_x = rng.normal(size=(n, 2))
        efeat = rng.normal(size=(e, 4))
        steps.append(_GraphStep(node_x, src, dst, efeat))
        steps_plus.append(_GraphStep(np.vstack([node_x, rng.normal(size=(1, 2))]),
                                     src, dst, efeat))
    base = encoder(steps, False, None).data
    grown = encoder(steps_plus, False, None).data
    np.testing.assert_allclose(grown[:n], base, atol=1e-10)


def test_fit_rejects_inconsistent_windows():
    w2 = small_windows(w=2)
    w3 = small_windows(w=3)
    with pytest.raises(ValueError, match="length"):
        GraphLinkPredictor(**TINY).fit([w2[0], w3[0]])
    est = GraphLinkPredictor(**TINY).fit(w2[:10])
    with pytest.raises(ValueError, match="fitted with"):
        est.predict(w3[:2])


def test_fit_is_deterministic():
    windows = small_windows()
    a = GraphLinkPredictor(**TINY).fit(windows[:15], val_windows=windows[15:18])
    b = GraphLinkPredictor(**TINY).fit(windows[:15], val_windows=windows[15:18])
    for pa, pb in zip(a.params_, b.params_):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert a.history_ == b.history_


def test_dropout_only_active_during_training():
    windows = small_windows()
    est = GraphLinkPredictor(dropout=0.5, **TINY).fit(windows[:10])
    s1, _ = est.flat_scores(windows[10:12])
    s2, _ = est.flat_scores(windows[10:12])
    np.testing.assert_array_equal(s1, s2)


def test_save_load_round_trip(tmp_path):
    windows = small_windows()
    est = GraphLinkPredictor(**TINY).fit(windows[:12])
    est.save(tmp_path / "run", provenance={"command": "test", "seed": 0})
    clone = load_model(tmp_path / "run")
    assert isinstance(clone, GraphLinkPredictor)
    assert clone.window_ == est.window_ and clone.n_nodes_ == est.n_nodes_
    np.testing.assert_array_equal(clone.predict_proba(windows[12:14]),
                                  est.predict_proba(windows[12:14]))
    # byte-exact checkpoint after a save/load/save cycle
    clone.save(tmp_path / "run2", provenance={"command": "test", "seed": 0})
    assert (tmp_path / "run" / "model.ckpt").read_bytes() == \
        (tmp_path / "run2" / "model.ckpt").read_bytes()


def test_save_load_baseline(tmp_path):
    windows = small_windows(w=2)
    est = BaselineLinkPredictor(kind="gru", hidden=8, mlp_hidden=(8,), epochs=1)
    est.fit(windows[:10])
    est.save(tmp_path / "b")
    clone = load_model(tmp_path / "b")
    np.testing.assert_array_equal(clone.predict_proba(windows[10:12]),
                                  est.predict_proba(windows[10:12]))


def test_baseline_missing_edge_features_are_flagged():
    # two distant nodes never exchange records: zero-filled features, flag 0
    windows = small_windows(n_steps=12, w=2, mobility="rwp", seed=2)
    est = BaselineLinkPredictor(kind="mlp", hidden=8, epochs=1).fit(windows[:8])
    from linkcast.models import _SnapshotCache, PAIR_STEP_DIM

    cache = _SnapshotCache(est.stats_, est.n_nodes_)
    snap = windows[0].snapshots[0]
    feats = cache.pair_step(snap)
    assert feats.shape == (6 * 5, PAIR_STEP_DIM)
    recorded = {(e.src, e.dst) for e in snap.edges}
    for k in range(feats.shape[0]):
        i, j = int(cache.pair_i[k]), int(cache.pair_j[k])
        if (i, j) not in recorded:
            assert feats[k, -1] == 0.0
            np.testing.assert_array_equal(feats[k, 4:8], np.zeros(4))
        else:
            assert feats[k, -1] == 1.0


def test_multi_edge_features_are_mean_aggregated():
    windows = small_windows(n_steps=8, w=2)
    est = BaselineLinkPredictor(kind="mlp", hidden=8, epochs=1).fit(windows[:5])
    from linkcast.models import _SnapshotCache

    cache = _SnapshotCache(est.stats_, est.n_nodes_)
    snap = windows[0].snapshots[0]
    feats = cache.pair_step(snap)
    by_pair = {}
    for e in snap.edges:
        by_pair.setdefault((e.src, e.dst), []).append(
            [e.distance_m, e.path_loss_db, e.prop_delay_s, e.timestamp_s]
        )
    multi = next((p for p, rows in by_pair.items() if len(rows) > 1), None)
    assert multi is not None, "test dataset should contain a multi-edge"
    k = np.flatnonzero((cache.pair_i == multi[0]) & (cache.pair_j == multi[1]))[0]
    raw_mean = np.mean(by_pair[multi], axis=0)
    expected = (raw_mean - est.stats_.edge_mean) / est.stats_.edge_std
    np.testing.assert_allclose(feats[k, 4:8], expected, atol=1e-12)
