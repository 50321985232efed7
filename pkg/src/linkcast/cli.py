"""Command-line entry point: simulate -> train -> eval -> ablate -> analyze.

Every subcommand logs its fully resolved configuration (JSON, one line) before
running, and every artifact it writes embeds the producing command line and
seed.  Flags may also come from a ``--config`` JSON file using the same field
names; explicit flags win.  ``LINKCAST_OUT_DIR`` relocates relative output
paths and is the only environment override.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from .graph import (
    DatasetFormatError,
    build_windows,
    dataset_stats,
    hop_counts,
    label_connectivity,
    load_snapshots,
    save_snapshots,
)
from .mobility import SimConfig, simulate
from .models import load_model, make_model, gradient_check_suite
from .protocol import (
    SplitConfig,
    TrainingDiverged,
    metrics_row,
    run_ablation,
    split_windows,
    TrainConfig,
    write_csv,
)

GRAD_TOLERANCE = 1e-4


def _out_path(path: str) -> str:
    base = os.environ.get("LINKCAST_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return obj


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """CLI flag > config-file entry > default, keyed by identical field names."""
    config = _load_config_file(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValueError(f"config file has unknown fields: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        resolved[key] = cli_value if cli_value is not None else config.get(key, default)
    return resolved


def _announce(command: str, resolved: dict, seed) -> None:
    print(json.dumps({"command": command, "seed": seed, "config": resolved}, sort_keys=True))


def _provenance(args) -> dict:
    return {"command": "linkcast " + " ".join(args._argv)}


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> int:
    defaults = {f.name: f.default for f in dataclasses.fields(SimConfig)}
    resolved = _resolve(args, defaults)
    cfg = SimConfig(**resolved)
    command = _provenance(args)["command"]
    _announce(command, dataclasses.asdict(cfg), cfg.rng_seed)
    snapshots = simulate(cfg)
    out = _out_path(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_snapshots(out, snapshots, extra_header={"command": command, "seed": cfg.rng_seed})
    load_snapshots(out)  # validate what we just wrote
    stats = dataset_stats(snapshots)
    print(f"wrote {out}: {stats.n_states} states, avg edges {stats.avg_edges:.1f}")
    return 0


# ---------------------------------------------------------------------------
# train / eval

_TRAIN_MODEL_DEFAULTS = dict(
    spatial_hidden=64, heads=4, embedding_dim=64, temporal_hidden=128,
    dropout=0.2, threshold=0.5,
)
_TRAIN_LOOP_DEFAULTS = dict(
    learning_rate=1e-3, epochs=20, batch_windows=1, optimizer="adam",
    patience=5, rng_seed=0,
)


def _cmd_train(args) -> int:
    defaults = dict(_TRAIN_MODEL_DEFAULTS, **_TRAIN_LOOP_DEFAULTS)
    defaults.update(model="gtc-lstm", windows=5, split_seed=0, preset="desk")
    resolved = _resolve(args, defaults)
    command = _provenance(args)["command"]
    _announce(command, resolved, resolved["rng_seed"])

    snapshots, _ = load_snapshots(args.data)
    all_windows = build_windows(snapshots, int(resolved["windows"]))
    split = split_windows(len(all_windows), SplitConfig(rng_seed=int(resolved["split_seed"])))
    train_w = [all_windows[k] for k in split.train]
    val_w = [all_windows[k] for k in split.val]

    overrides = dict(
        dropout=resolved["dropout"],
        threshold=resolved["threshold"],
        learning_rate=resolved["learning_rate"],
        epochs=int(resolved["epochs"]),
        batch_windows=int(resolved["batch_windows"]),
        optimizer=resolved["optimizer"],
        patience=int(resolved["patience"]),
        random_state=int(resolved["rng_seed"]),
    )
    model_name = resolved["model"]
    if model_name not in ("mlp", "lstm", "gru"):
        overrides.update(
            spatial_hidden=int(resolved["spatial_hidden"]),
            heads=int(resolved["heads"]),
            embedding_dim=int(resolved["embedding_dim"]),
            temporal_hidden=int(resolved["temporal_hidden"]),
        )
        if resolved["preset"] == "paper":
            overrides.update(spatial_hidden=1024, heads=128, embedding_dim=1024,
                             temporal_hidden=2048, mlp_hidden=(2048,),
                             learning_rate=1e-6)
    model = make_model(model_name, **overrides)
    model.fit(train_w, val_windows=val_w)

    out_dir = _out_path(args.out)
    provenance = {"command": command, "seed": int(resolved["rng_seed"]),
                  "split_seed": int(resolved["split_seed"]), "data": args.data,
                  "model": model_name, "windows": int(resolved["windows"])}
    model.save(out_dir, provenance=provenance)
    loss_rows = [
        {
            "epoch": k,
            "train_loss": train,
            "val_loss": val,
        }
        for k, (train, val) in enumerate(
            zip(model.history_["train_loss"],
                model.history_["val_loss"] or [float("nan")] * len(model.history_["train_loss"]))
        )
    ]
    write_csv(
        os.path.join(out_dir, "loss.csv"),
        loss_rows,
        header_comments=[f"command: {command}", f"seed: {resolved['rng_seed']}"],
    )
    print(f"trained {model_name} on {len(train_w)} windows; artifacts in {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    resolved = _resolve(args, {"split": "test", "split_seed": 0})
    command = _provenance(args)["command"]
    model = load_model(args.model_dir)
    _announce(command, dict(resolved, model_dir=args.model_dir), resolved["split_seed"])

    snapshots, _ = load_snapshots(args.data)
    all_windows = build_windows(snapshots, model.window_)
    which = resolved["split"]
    if which == "all":
        windows = all_windows
    else:
        split = split_windows(len(all_windows), SplitConfig(rng_seed=int(resolved["split_seed"])))
        windows = [all_windows[k] for k in getattr(split, which)]
    report = model.evaluate(windows)
    name = getattr(model, "kind", None) or f"{model.spatial}-{model.temporal}"
    out = _out_path(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_csv(
        out,
        [metrics_row(name, model.window_, report)],
        header_comments=[f"command: {command}", f"seed: {resolved['split_seed']}"],
    )
    print(f"{name} w={model.window_} on {which}: acc={report.accuracy:.4f} "
          f"pre={report.precision:.4f} rec={report.recall:.4f} f1={report.f1:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _cmd_ablate(args) -> int:
    defaults = dict(_TRAIN_LOOP_DEFAULTS)
    defaults.update(windows=5, split_seed=0, spatial_hidden=32, heads=4,
                    embedding_dim=32, temporal_hidden=64, epochs=8)
    resolved = _resolve(args, defaults)
    command = _provenance(args)["command"]
    _announce(command, resolved, resolved["rng_seed"])

    snapshots, _ = load_snapshots(args.data)
    all_windows = build_windows(snapshots, int(resolved["windows"]))
    split = split_windows(len(all_windows), SplitConfig(rng_seed=int(resolved["split_seed"])))
    grid = run_ablation(
        all_windows,
        split,
        TrainConfig(
            learning_rate=resolved["learning_rate"],
            epochs=int(resolved["epochs"]),
            batch_windows=int(resolved["batch_windows"]),
            optimizer=resolved["optimizer"],
            patience=int(resolved["patience"]),
            rng_seed=int(resolved["rng_seed"]),
        ),
        model_overrides=dict(
            spatial_hidden=int(resolved["spatial_hidden"]),
            heads=int(resolved["heads"]),
            embedding_dim=int(resolved["embedding_dim"]),
            temporal_hidden=int(resolved["temporal_hidden"]),
            mlp_hidden=(int(resolved["temporal_hidden"]),),
        ),
        progress=lambda cell: print(f"training {cell} ...", flush=True),
    )
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    write_csv(
        os.path.join(out_dir, "ablation.csv"),
        grid.to_rows(),
        header_comments=[f"command: {command}", f"seed: {resolved['rng_seed']}"],
    )
    print(grid.format_table())
    failed = [c.name for c in grid.cells if c.metrics is None]
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# analyze


def _cmd_analyze(args) -> int:
    resolved = _resolve(args, {"threshold_db": 128.0, "times": None,
                               "hops": False, "svg": False})
    command = _provenance(args)["command"]
    _announce(command, resolved, None)
    snapshots, header = load_snapshots(args.data)
    if not snapshots:
        raise ValueError("dataset is empty; nothing to analyze")
    threshold = float(resolved["threshold_db"])
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    comments = [f"command: {command}", f"seed: {header.get('seed', '')}"]

    rows = []
    for snap in snapshots:
        labels = label_connectivity(snap, threshold)
        hops = hop_counts(snap, threshold)
        rows.append({
            "t": snap.t,
            "records": len(snap.edges),
            "connected_pairs": int(labels.sum()),
            "max_hops": int(hops.max()),
        })
    write_csv(os.path.join(out_dir, "connectivity_over_time.csv"), rows, comments)

    if resolved["times"] is not None:
        times = [int(v) for v in str(resolved["times"]).split(",")]
    else:
        picks = np.linspace(0, len(snapshots) - 1, num=min(4, len(snapshots)), dtype=int)
        times = sorted({snapshots[k].t for k in picks})
    by_t = {s.t: s for s in snapshots}
    if resolved["hops"]:
        for t in times:
            if t not in by_t:
                raise ValueError(f"no snapshot at t={t}")
            hops = hop_counts(by_t[t], threshold)
            grid_rows = [
                {"src": i, **{f"dst{j}": int(hops[i, j]) for j in range(hops.shape[1])}}
                for i in range(hops.shape[0])
            ]
            write_csv(os.path.join(out_dir, f"hops_t{t}.csv"), grid_rows, comments)
            if resolved["svg"]:
                _write_svg_heatmap(
                    os.path.join(out_dir, f"hops_t{t}.svg"), hops,
                    title=f"hop counts at t={t}",
                )
    print(f"analysis written to {out_dir} (times {times})")
    return 0


def _write_svg_heatmap(path, matrix: np.ndarray, title: str, cell: int = 14) -> None:
    n_rows, n_cols = matrix.shape
    top = 24
    peak = float(matrix.max()) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{n_cols * cell}" height="{n_rows * cell + top}">',
        f'<text x="2" y="14" font-size="12" font-family="monospace">{title}</text>',
    ]
    for i in range(n_rows):
        for j in range(n_cols):
            v = float(matrix[i, j])
            if v <= 0:
                fill = "#ffffff"  # unreachable or self: white
            else:
                shade = int(230 - 190 * (v / peak))
                fill = f"rgb({shade},{shade},255)"
            parts.append(
                f'<rect x="{j * cell}" y="{i * cell + top}" width="{cell}" '
                f'height="{cell}" fill="{fill}" stroke="#dddddd"/>'
            )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# gradcheck


def _cmd_gradcheck(args) -> int:
    resolved = _resolve(args, {"sample": 12, "rng_seed": 0})
    command = _provenance(args)["command"]
    _announce(command, resolved, resolved["rng_seed"])
    results = gradient_check_suite(
        sample_per_param=int(resolved["sample"]), seed=int(resolved["rng_seed"])
    )
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        print(f"{name:<24} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    print(f"worst: {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    return 0 if worst < GRAD_TOLERANCE else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linkcast",
        description="Synthesize tactical mobile-network datasets and predict "
                    "next-state link connectivity.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="generate a snapshot stream dataset")
    sim.add_argument("--mobility", choices=["rwp", "grouped"], dest="mobility")
    sim.add_argument("--nodes", type=int, dest="n_nodes")
    sim.add_argument("--steps", type=int, dest="n_steps")
    sim.add_argument("--vmax", type=float, dest="v_max")
    sim.add_argument("--arena", type=float, dest="arena_m")
    sim.add_argument("--groups", type=int, dest="n_groups")
    sim.add_argument("--group-radius", type=float, dest="group_radius_m")
    sim.add_argument("--rate", type=float, dest="messages_per_pair_rate")
    sim.add_argument("--frequency", type=float, dest="frequency_hz")
    sim.add_argument("--ht", type=float, dest="ht_m")
    sim.add_argument("--hr", type=float, dest="hr_m")
    sim.add_argument("--margin", type=float, dest="emit_margin_db")
    sim.add_argument("--pause", type=float, dest="pause_max_s")
    sim.add_argument("--label-threshold", type=float, dest="label_threshold_db")
    sim.add_argument("--seed", type=int, dest="rng_seed")
    sim.add_argument("--config", help="JSON file with SimConfig field names")
    sim.add_argument("--out", required=True, help="output snapshot stream path")
    sim.set_defaults(func=_cmd_simulate)

    train = sub.add_parser("train", help="train a model on a dataset")
    train.add_argument("--data", required=True)
    train.add_argument("--model", dest="model",
                       help="mlp|lstm|gru, a spatial kind, or '<spatial>-<temporal>'")
    train.add_argument("--windows", type=int, dest="windows")
    train.add_argument("--epochs", type=int, dest="epochs")
    train.add_argument("--lr", type=float, dest="learning_rate")
    train.add_argument("--batch-windows", type=int, dest="batch_windows")
    train.add_argument("--optimizer", choices=["adam", "sgd"], dest="optimizer")
    train.add_argument("--patience", type=int, dest="patience")
    train.add_argument("--dropout", type=float, dest="dropout")
    train.add_argument("--threshold", type=float, dest="threshold")
    train.add_argument("--spatial-hidden", type=int, dest="spatial_hidden")
    train.add_argument("--heads", type=int, dest="heads")
    train.add_argument("--embedding", type=int, dest="embedding_dim")
    train.add_argument("--temporal-hidden", type=int, dest="temporal_hidden")
    train.add_argument("--preset", choices=["desk", "paper"], dest="preset")
    train.add_argument("--seed", type=int, dest="rng_seed")
    train.add_argument("--split-seed", type=int, dest="split_seed")
    train.add_argument("--config", help="JSON file with the same field names")
    train.add_argument("--out", required=True, help="output directory")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained model")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model-dir", required=True)
    ev.add_argument("--split", choices=["train", "val", "test", "all"], dest="split")
    ev.add_argument("--split-seed", type=int, dest="split_seed")
    ev.add_argument("--config")
    ev.add_argument("--out", required=True, help="metrics CSV path")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="run the encoder ablation grid")
    ab.add_argument("--data", required=True)
    ab.add_argument("--windows", type=int, dest="windows")
    ab.add_argument("--epochs", type=int, dest="epochs")
    ab.add_argument("--lr", type=float, dest="learning_rate")
    ab.add_argument("--batch-windows", type=int, dest="batch_windows")
    ab.add_argument("--optimizer", choices=["adam", "sgd"], dest="optimizer")
    ab.add_argument("--patience", type=int, dest="patience")
    ab.add_argument("--spatial-hidden", type=int, dest="spatial_hidden")
    ab.add_argument("--heads", type=int, dest="heads")
    ab.add_argument("--embedding", type=int, dest="embedding_dim")
    ab.add_argument("--temporal-hidden", type=int, dest="temporal_hidden")
    ab.add_argument("--seed", type=int, dest="rng_seed")
    ab.add_argument("--split-seed", type=int, dest="split_seed")
    ab.add_argument("--config")
    ab.add_argument("--out", required=True, help="output directory")
    ab.set_defaults(func=_cmd_ablate)

    an = sub.add_parser("analyze", help="hop-count and connectivity analytics")
    an.add_argument("--data", required=True)
    an.add_argument("--threshold", type=float, dest="threshold_db")
    an.add_argument("--times", help="comma-separated step indices for hop matrices")
    an.add_argument("--hops", action="store_true", default=None)
    an.add_argument("--svg", action="store_true", default=None)
    an.add_argument("--config")
    an.add_argument("--out", required=True, help="output directory")
    an.set_defaults(func=_cmd_analyze)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    gc.add_argument("--sample", type=int, dest="sample",
                    help="entries probed per parameter in the composed model")
    gc.add_argument("--seed", type=int, dest="rng_seed")
    gc.add_argument("--config")
    gc.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, NotImplementedError,
            DatasetFormatError, TrainingDiverged, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
