import json
import os
import subprocess
import sys

import numpy as np
import pytest

from linkcast.cli import main
from linkcast.graph import save_snapshots
from conftest import make_snapshot


SIM_ARGS = ["simulate", "--mobility", "grouped", "--nodes", "6", "--steps", "30",
            "--ht", "0.3", "--hr", "0.3", "--arena", "900", "--groups", "2",
            "--group-radius", "120", "--rate", "2.5", "--seed", "7"]

TINY_TRAIN = ["--windows", "2", "--epochs", "1", "--spatial-hidden", "8",
              "--heads", "2", "--embedding", "8", "--temporal-hidden", "8"]


def test_simulate_writes_deterministic_dataset(tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    assert main(SIM_ARGS + ["--out", str(a)]) == 0
    first = a.read_bytes()
    assert main(SIM_ARGS + ["--out", str(a)]) == 0  # identical command, re-run
    assert a.read_bytes() == first
    out = capsys.readouterr().out
    resolved = json.loads(out.splitlines()[0])
    assert resolved["seed"] == 7
    assert resolved["config"]["n_nodes"] == 6
    header = json.loads(a.read_text().splitlines()[0])
    assert header["seed"] == 7
    assert "simulate" in header["command"]


def test_simulate_reads_config_file(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n_nodes": 5, "n_steps": 12, "rng_seed": 3}))
    out = tmp_path / "d.jsonl"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 13  # header + 12 snapshots
    # explicit flag beats the config file
    out2 = tmp_path / "d2.jsonl"
    assert main(["simulate", "--config", str(cfg), "--steps", "4", "--out", str(out2)]) == 0
    assert len(out2.read_text().splitlines()) == 5


def test_simulate_rejects_unknown_config_fields(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"warp_speed": 9}))
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.jsonl")])
    assert rc == 1
    assert "unknown fields" in capsys.readouterr().err


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--bogus", "1", "--out", str(tmp_path / "x.jsonl")])
    assert exc.value.code == 2


def test_missing_input_file_fails_cleanly(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "absent.jsonl"),
               "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_train_eval_round_trip(tmp_path, capsys):
    data = tmp_path / "data.jsonl"
    assert main(SIM_ARGS + ["--out", str(data)]) == 0
    run = tmp_path / "run"
    rc = main(["train", "--data", str(data), "--model", "gcn-gru", "--seed", "1",
               *TINY_TRAIN, "--out", str(run)])
    assert rc == 0
    assert (run / "model.ckpt").exists()
    assert (run / "model.json").exists()
    loss_text = (run / "loss.csv").read_text()
    assert loss_text.startswith("# command: linkcast train")
    sidecar = json.loads((run / "model.json").read_text())
    assert sidecar["provenance"]["seed"] == 1
    assert sidecar["params"]["spatial"] == "gcn"

    metrics = tmp_path / "metrics.csv"
    rc = main(["eval", "--data", str(data), "--model-dir", str(run),
               "--out", str(metrics)])
    assert rc == 0
    text = metrics.read_text()
    assert "accuracy" in text and "gcn-gru" in text
    assert "acc=" in capsys.readouterr().out


def test_eval_is_reproducible(tmp_path):
    data = tmp_path / "data.jsonl"
    main(SIM_ARGS + ["--out", str(data)])
    run = tmp_path / "run"
    main(["train", "--data", str(data), "--model", "mlp", "--windows", "2",
          "--epochs", "1", "--out", str(run)])
    m1, m2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    main(["eval", "--data", str(data), "--model-dir", str(run), "--out", str(m1)])
    main(["eval", "--data", str(data), "--model-dir", str(run), "--out", str(m2)])
    a = [l for l in m1.read_text().splitlines() if not l.startswith("#")]
    b = [l for l in m2.read_text().splitlines() if not l.startswith("#")]
    assert a == b


def test_analyze_hops_on_path_dataset(tmp_path):
    # 0 -> 1 -> 2 chain: farthest pair is two hops
    snaps = [make_snapshot(t, 3, [(0, 1, 100.0), (1, 2, 100.0)]) for t in range(3)]
    data = tmp_path / "path.jsonl"
    save_snapshots(data, snaps)
    out = tmp_path / "analysis"
    rc = main(["analyze", "--data", str(data), "--hops", "--svg",
               "--times", "1", "--out", str(out)])
    assert rc == 0
    rows = [l for l in (out / "hops_t1.csv").read_text().splitlines()
            if l and not l.startswith("#")]
    table = np.array([[int(v) for v in r.split(",")[1:]] for r in rows[1:]])
    assert table.max() == 2
    assert table[0, 2] == 2
    assert (out / "connectivity_over_time.csv").exists()
    svg = (out / "hops_t1.svg").read_text()
    assert svg.startswith("<svg") and "rect" in svg


def test_ablate_small_grid(tmp_path):
    data = tmp_path / "data.jsonl"
    main(SIM_ARGS + ["--out", str(data)])
    out = tmp_path / "ablation"
    rc = main(["ablate", "--data", str(data), "--windows", "2", "--epochs", "1",
               "--spatial-hidden", "8", "--heads", "2", "--embedding", "8",
               "--temporal-hidden", "8", "--out", str(out)])
    assert rc == 0
    text = (out / "ablation.csv").read_text()
    assert text.count("\n") >= 13  # 2 comments + header + 12 cells
    for name in ("GCN", "GTC-LSTM", "GATv2-GRU"):
        assert name in text


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--sample", "2", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "composed_gtc_lstm" in out
    assert "ok" in out


def test_out_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("LINKCAST_OUT_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--nodes", "4", "--steps", "3",
                 "--out", "nested/data.jsonl"]) == 0
    assert (tmp_path / "nested" / "data.jsonl").exists()


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "linkcast.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "gradcheck" in proc.stdout
