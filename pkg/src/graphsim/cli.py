"""Command-line entry point: reproducible synth/preprocess/train/evaluate runs.

Subcommands:
  synth       write a synthetic cohort (coordinates, manifest, time series)
  preprocess  build the anatomical graph and per-subject profile files
  train       split the cohort, sample pairs, train, checkpoint
  evaluate    score a checkpoint on the held-out split, write the report
  baseline    PCA/Euclidean distances only, no model required
  permtest    standalone permutation test on a distances CSV

All paths in the config are resolved against --workdir. Every command
echoes its fully resolved configuration next to its outputs; reruns with
the same config and seed produce byte-identical primary outputs.

Seeding: the config seed S drives the whole pipeline deterministically
(split uses S, pair sampling S+1, model init S+2, the training loop S+3,
evaluation permutation tests S+4).

Exit codes: 0 success, 2 validation failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config, write_config_echo
from .connectome import (
    RoiAtlas,
    build_spatial_graph,
    graph_hash,
    load_cohort,
    load_profile_csv,
    signal_from_record,
    synth_atlas,
    synth_cohort,
)
from .errors import NumericError, ValidationError
from .evaluation import (
    evaluate,
    pca_euclidean_baseline,
    permutation_test,
    profile_feature_vectors,
    write_distances_csv,
    write_report_json,
    write_roc_csv,
)
from .model import init_model, load_checkpoint
from .spectral import Adjacency, normalized_laplacian, rescale_laplacian
from .training import (
    TrainConfig,
    all_test_pairs,
    default_pair_budget,
    sample_pairs,
    split_cohort,
    train,
    write_loss_trace,
)

FLOAT_FMT = "%.17g"


def _save_matrix(path, arr) -> None:
    np.savetxt(path, np.asarray(arr, dtype=np.float64), delimiter=",", fmt=FLOAT_FMT)


def _load_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


def _dump_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _effective_lambda_max(lam: float) -> float:
    # edgeless graphs report 0; substituting 2 keeps L~ = L - I in [-1, 1]
    return lam if lam > 0.0 else 2.0


def _rescaled_laplacian_of(adjacency: Adjacency) -> np.ndarray:
    lap = normalized_laplacian(adjacency)
    if lap.lambda_max <= 0.0:
        lap = type(lap)(l=lap.l, lambda_max=_effective_lambda_max(lap.lambda_max))
    return rescale_laplacian(lap)


def cmd_synth(cfg: dict, workdir: Path) -> int:
    s = cfg["synth"]
    paths = cfg["paths"]
    atlas = synth_atlas(s["r"], seed=s["seed"])
    cohort = synth_cohort(
        s["n_subjects"],
        r=s["r"],
        t=s["t"],
        effect=s["effect"],
        seed=s["seed"],
        n_sites=s["n_sites"],
        noise_scale=s["noise_scale"],
    )
    _save_matrix(workdir / paths["coords"], atlas.coords)
    ts_dir = workdir / "timeseries"
    ts_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    for rec in cohort:
        ts_path = ts_dir / f"{rec.subject_id}.csv"
        _save_matrix(ts_path, rec.timeseries)
        manifest_rows.append(
            [rec.subject_id, rec.label, rec.site_id, ts_path.relative_to(workdir).as_posix()]
        )
    with open(workdir / paths["manifest"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label", "site_id", "timeseries_path"])
        writer.writerows(manifest_rows)
    write_config_echo(cfg, workdir / "config_echo_synth.toml")
    print(f"synth: wrote {len(cohort)} subjects under {workdir}")
    return 0


def cmd_preprocess(cfg: dict, workdir: Path) -> int:
    paths = cfg["paths"]
    coords = _load_matrix(workdir / paths["coords"])
    atlas = RoiAtlas(coords=coords)
    cohort = load_cohort(workdir / paths["manifest"], expected_r=atlas.r)
    if not cohort:
        raise ValidationError("empty cohort: nothing to preprocess")

    graph = build_spatial_graph(atlas, k=cfg["graph"]["k"], weight_mode=cfg["graph"]["weight_mode"])
    _save_matrix(workdir / paths["adjacency_file"], graph.adjacency.w)
    _dump_json(
        {
            "schema_version": 1,
            "r": atlas.r,
            "k": graph.k_neighbors,
            "weight_mode": graph.weight_mode,
            "graph_hash": graph_hash(graph.adjacency),
        },
        workdir / paths["graph_file"],
    )

    profiles_dir = workdir / paths["profiles_dir"]
    profiles_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    rows = []
    for rec in cohort:
        try:
            sig = signal_from_record(rec)
        except ValidationError as exc:
            failures.append(f"{rec.subject_id}: {exc}")
            continue
        out = profiles_dir / f"{rec.subject_id}.csv"
        _save_matrix(out, sig.features)
        rows.append([rec.subject_id, rec.label, rec.site_id, out.relative_to(workdir).as_posix()])
    if failures:
        raise ValidationError(
            "profile computation failed for "
            f"{len(failures)} subject(s):\n  " + "\n  ".join(failures)
        )
    with open(workdir / paths["profiles_manifest"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label", "site_id", "profile_path"])
        writer.writerows(rows)
    write_config_echo(cfg, workdir / "config_echo_preprocess.toml")
    print(f"preprocess: {len(rows)} profiles, graph hash {graph_hash(graph.adjacency)[:12]}")
    return 0


def _load_graph(cfg: dict, workdir: Path) -> tuple[Adjacency, dict]:
    paths = cfg["paths"]
    meta_path = workdir / paths["graph_file"]
    if not meta_path.exists():
        raise ValidationError(f"graph metadata not found: {meta_path} (run preprocess)")
    meta = json.loads(meta_path.read_text())
    adjacency = Adjacency(_load_matrix(workdir / paths["adjacency_file"]))
    if graph_hash(adjacency) != meta["graph_hash"]:
        raise ValidationError("adjacency file does not match the stored graph hash")
    return adjacency, meta


def _load_signals(cfg: dict, workdir: Path) -> list:
    path = workdir / cfg["paths"]["profiles_manifest"]
    if not path.exists():
        raise ValidationError(f"profiles manifest not found: {path} (run preprocess)")
    signals = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            signals.append(
                load_profile_csv(
                    workdir / row["profile_path"],
                    subject_id=row["subject_id"],
                    label=int(row["label"]),
                    site_id=row["site_id"],
                )
            )
    if not signals:
        raise ValidationError(f"no profiles listed in {path}")
    return signals


def cmd_train(cfg: dict, workdir: Path) -> int:
    adjacency, _ = _load_graph(cfg, workdir)
    signals = _load_signals(cfg, workdir)
    out_dir = workdir / cfg["paths"]["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)

    t = cfg["train"]
    seed = t["seed"]
    train_idx, test_idx = split_cohort(signals, t["test_fraction"], seed=seed)
    _dump_json(
        {
            "schema_version": 1,
            "seed": seed,
            "train_indices": train_idx.tolist(),
            "test_indices": test_idx.tolist(),
            "subject_ids": [s.subject_id for s in signals],
        },
        out_dir / "split.json",
    )

    train_signals = [signals[i] for i in train_idx]
    budget = t["pair_budget"] or default_pair_budget(len(train_signals))
    pair_set = sample_pairs(train_signals, budget, seed=seed + 1)

    l_scaled = _rescaled_laplacian_of(adjacency)
    model = init_model(
        adjacency.r,
        layer_widths=tuple(cfg["model"]["layer_widths"]),
        k_order=cfg["model"]["k_order"],
        seed=seed + 2,
        l_scaled=l_scaled,
    )
    loss_cfg = _loss_config(cfg)
    train_cfg = TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        dropout_keep=t["dropout_keep"],
        seed=seed + 3,
        loss=loss_cfg,
        checkpoint_interval=t["checkpoint_interval"],
    )
    ghash = graph_hash(adjacency)
    model, trace = train(
        model,
        train_signals,
        pair_set,
        train_cfg,
        checkpoint_dir=out_dir / "checkpoints",
        graph_hash=ghash,
    )
    write_loss_trace(out_dir / "loss_trace.csv", trace)
    write_config_echo(cfg, out_dir / "config_echo_train.toml")
    print(
        f"train: {len(pair_set)} pairs ({pair_set.n_matching} matching), "
        f"{t['epochs']} epochs, final loss {trace[-1]:.6f}"
    )
    return 0


def _loss_config(cfg: dict):
    from .objective import LossConfig

    lo = cfg["loss"]
    return LossConfig(margin=lo["margin"], lambda_weight=lo["lambda_weight"], l2_coeff=lo["l2_coeff"])


def _load_split(out_dir: Path, signals) -> tuple[np.ndarray, np.ndarray]:
    split_path = out_dir / "split.json"
    if not split_path.exists():
        raise ValidationError(f"split file not found: {split_path} (run train)")
    doc = json.loads(split_path.read_text())
    if doc["subject_ids"] != [s.subject_id for s in signals]:
        raise ValidationError("profiles manifest changed since the split was made")
    return np.array(doc["train_indices"], dtype=int), np.array(doc["test_indices"], dtype=int)


def cmd_evaluate(cfg: dict, workdir: Path) -> int:
    adjacency, _ = _load_graph(cfg, workdir)
    signals = _load_signals(cfg, workdir)
    out_dir = workdir / cfg["paths"]["output_dir"]
    ckpt_path = out_dir / "checkpoints" / "model.json"
    if not ckpt_path.exists():
        raise ValidationError(f"checkpoint not found: {ckpt_path} (run train)")
    model, meta = load_checkpoint(ckpt_path)
    if meta["graph_hash"] != graph_hash(adjacency):
        raise ValidationError(
            "checkpoint was trained against a different graph "
            f"(stored hash {meta['graph_hash'][:12]}...)"
        )
    train_idx, test_idx = _load_split(out_dir, signals)

    report = evaluate(
        model,
        [signals[i] for i in test_idx],
        [signals[i] for i in train_idx],
        knn_k=cfg["eval"]["knn_k"],
        variance_keep=cfg["eval"]["variance_keep"],
        n_perm=cfg["eval"]["n_perm"],
        seed=cfg["train"]["seed"] + 4,
    )
    write_report_json(report, out_dir / "report.json")
    write_roc_csv(report, out_dir / "roc.csv")
    write_distances_csv(report, out_dir / "distances.csv")
    write_config_echo(cfg, out_dir / "config_echo_evaluate.toml")
    learned = report.auc["learned"]["all"]
    baseline = report.auc["baseline"]["all"]
    print(
        f"evaluate: {report.n_pairs} test pairs, AUC learned {learned:.3f} "
        f"vs baseline {baseline:.3f}"
    )
    return 0


def cmd_baseline(cfg: dict, workdir: Path) -> int:
    signals = _load_signals(cfg, workdir)
    out_dir = workdir / cfg["paths"]["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    train_idx, test_idx = _load_split(out_dir, signals)
    test_signals = [signals[i] for i in test_idx]
    dists = pca_euclidean_baseline(
        profile_feature_vectors([signals[i] for i in train_idx]),
        profile_feature_vectors(test_signals),
        variance_keep=cfg["eval"]["variance_keep"],
    )
    pair_set = all_test_pairs(test_signals, np.arange(len(test_signals)))
    with open(out_dir / "baseline_distances.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_a", "subject_b", "baseline_distance", "match", "same_site"])
        for i, j, match, same_site in pair_set.pairs:
            writer.writerow(
                [
                    test_signals[i].subject_id,
                    test_signals[j].subject_id,
                    format(dists[i, j], ".17g"),
                    match,
                    same_site,
                ]
            )
    write_config_echo(cfg, out_dir / "config_echo_baseline.toml")
    print(f"baseline: {len(pair_set)} pair distances written")
    return 0


def cmd_permtest(cfg: dict, workdir: Path, distances: str, column: str) -> int:
    path = workdir / distances
    if not path.exists():
        raise ValidationError(f"distances file not found: {path}")
    matching, non_matching = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValidationError(f"{path}: missing column {column!r}")
        if "match" not in (reader.fieldnames or []):
            raise ValidationError(f"{path}: missing column 'match'")
        for row in reader:
            (matching if row["match"] == "1" else non_matching).append(float(row[column]))
    p = permutation_test(
        matching, non_matching, n_perm=cfg["eval"]["n_perm"], seed=cfg["train"]["seed"] + 4
    )
    out_dir = workdir / cfg["paths"]["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(
        {
            "schema_version": 1,
            "column": column,
            "n_matching": len(matching),
            "n_non_matching": len(non_matching),
            "n_perm": cfg["eval"]["n_perm"],
            "p_value": p,
        },
        out_dir / "permtest.json",
    )
    print(f"permtest: p = {p:.6g} ({column}, {len(matching)} vs {len(non_matching)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphsim",
        description="Learn and evaluate a similarity metric between labelled graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic cohort on disk"),
        ("preprocess", "build the shared graph and connectivity profiles"),
        ("train", "train the siamese network on sampled pairs"),
        ("evaluate", "evaluate a checkpoint on the held-out split"),
        ("baseline", "compute PCA/Euclidean baseline distances only"),
        ("permtest", "permutation test on a distances CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--workdir", default=".", help="base directory for all paths")
        p.add_argument("--config", default=None, help="TOML config file (relative to workdir)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable)",
        )
        if name == "permtest":
            p.add_argument("--distances", required=True, help="distances CSV (relative to workdir)")
            p.add_argument(
                "--column",
                default="learned_distance",
                help="distance column to test (default learned_distance)",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workdir = Path(args.workdir)
    try:
        if not workdir.is_dir():
            raise ValidationError(f"workdir does not exist: {workdir}")
        config_path = None
        if args.config is not None:
            config_path = Path(args.config)
            if not config_path.is_absolute():
                config_path = workdir / config_path
        cfg = load_config(config_path, args.overrides)
        if args.command == "synth":
            return cmd_synth(cfg, workdir)
        if args.command == "preprocess":
            return cmd_preprocess(cfg, workdir)
        if args.command == "train":
            return cmd_train(cfg, workdir)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, workdir)
        if args.command == "baseline":
            return cmd_baseline(cfg, workdir)
        if args.command == "permtest":
            return cmd_permtest(cfg, workdir, args.distances, args.column)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
