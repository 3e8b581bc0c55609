"""Command-line surface: train, evaluate, ablate, analyze, synth."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from utils.checkpoint import check_compatible, load_checkpoint, restore_model, save_checkpoint
from utils.community import contrast_summary, contrast_table, interaction_set, partitions_for_range
from utils.config import RunConfig, apply_overrides, emit_config, load_config
from utils.errors import CompatibilityError, ForecastError, UsageError
from utils.graphio import (
    Graph,
    SignalTensor,
    load_csv_dataset,
    prepare_dataset,
    synth_community_traffic,
    window_split,
    write_csv_dataset,
)
from utils.intergat import VARIANTS, save_interaction_csv
from utils.reporting import ablation_table, aggregate_seed_metrics, step_metric_frame
from utils.script_runner import run_seed_processes
from utils.spectra import eigenvector_table, heatmap_data, spectral_report
from utils.table_config import read_table, write_table
from utils.trainer import evaluate, run_experiment, run_seeds

logger = logging.getLogger(__name__)


def _seed_list(value: str) -> list[int]:
    """'5' means seeds 0..4; '3,7,11' lists them."""
    try:
        if "," in value:
            return [int(v) for v in value.split(",") if v.strip()]
        count = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seeds '{value}'") from None
    if count < 1:
        raise argparse.ArgumentTypeError("--seeds needs at least one seed")
    return list(range(count))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    seeds = argparse.ArgumentParser(add_help=False)
    group = seeds.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int)
    group.add_argument("--seeds", type=_seed_list, help="count (0..n-1) or comma list")
    seeds.add_argument("--threads", type=int, help="parallel seed processes")
    seeds.add_argument("--horizon", type=int)
    seeds.add_argument("--epochs", type=int)

    parser = argparse.ArgumentParser(prog="intergat", description="InterGAT spatio-temporal forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common, seeds], help="train and evaluate a model")
    train.add_argument("--variant", choices=VARIANTS)

    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--horizon", type=int)

    ablate = sub.add_parser("ablate", parents=[common, seeds], help="compare interaction variants")
    ablate.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variant tags")

    analyze = sub.add_parser("analyze", parents=[common], help="spectral and community analysis")
    analyze.add_argument("checkpoint")
    analyze.add_argument("--top-percent", type=float)
    analyze.add_argument("--binarize", action="store_true", default=None)
    analyze.add_argument("--matrix", choices=("auto", "raw", "processed"))
    analyze.add_argument("--absolute", action="store_true", default=None)
    analyze.add_argument("--k-max", type=int)

    synth = sub.add_parser("synth", parents=[common], help="write a planted-community dataset")
    synth.add_argument("--nodes", type=int)
    synth.add_argument("--communities", type=int)
    synth.add_argument("--steps", type=int)
    synth.add_argument("--seed", type=int)
    return parser


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    """defaults < config file < flags"""
    config = base or (load_config(args.config) if args.config else RunConfig())
    seeds = None
    if getattr(args, "seed", None) is not None and args.command != "synth":
        seeds = [args.seed]
    elif getattr(args, "seeds", None):
        seeds = args.seeds
    overrides = {
        "run.out": args.out,
        "run.seeds": seeds,
        "run.threads": getattr(args, "threads", None),
        "horizon.horizon": getattr(args, "horizon", None),
        "optimizer.epochs": getattr(args, "epochs", None),
        "model.variant": getattr(args, "variant", None),
        "run.top_percent": getattr(args, "top_percent", None),
        "run.binarize": getattr(args, "binarize", None),
        "run.matrix": getattr(args, "matrix", None),
        "run.absolute": getattr(args, "absolute", None),
        "run.k_max": getattr(args, "k_max", None),
    }
    if args.command == "synth":
        overrides.update({"dataset.nodes": args.nodes, "dataset.communities": args.communities,
                          "dataset.steps": args.steps, "dataset.synth_seed": args.seed})
    return apply_overrides(config, overrides)


def load_data(config: RunConfig):
    ds = config.dataset
    if ds.source == "csv":
        return load_csv_dataset(ds.adjacency, ds.speeds, missing=ds.missing,
                                zeros_as_missing=ds.zeros_as_missing)
    return synth_community_traffic(ds.nodes, ds.communities, ds.steps, ds.synth_seed)


def _write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_run(out: Path, config: RunConfig, graph, run):
    """Artifacts of one trained seed."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(emit_config(config), encoding="utf-8")
    save_checkpoint(out / "checkpoint.json", run.result.model, config, graph, run.dataset.norm,
                    meta={"seed": run.seed, "best_epoch": run.result.best_epoch,
                          "fit_steps": run.dataset.meta.get("fit_steps")})
    write_table(run.result.loss_frame(), out / "losses.csv")
    write_table(run.result.series, out / "interaction_series.csv")
    _write_json(out / "runtime.json", run.result.runtime.to_dict())
    _write_json(out / "metrics.json", {"seed": run.seed, "variant": config.model.variant,
                                       **run.metrics.to_dict()})
    write_table(step_metric_frame(run.metrics, config.dataset.step_minutes), out / "step_metrics.csv")


def _prepare(config: RunConfig):
    graph, signal = load_data(config)
    dataset = prepare_dataset(signal, config.horizon.history, config.horizon.horizon,
                              config.dataset.train_ratio, config.dataset.val_fraction)
    return graph, dataset


def cmd_train(config: RunConfig) -> Path:
    out = Path(config.run.out)
    seeds = config.run.seeds
    if len(seeds) == 1:
        graph, dataset = _prepare(config)
        _write_run(out, config, graph, run_experiment(config, graph, dataset, seeds[0]))
        return out

    if config.run.threads > 1:
        out.mkdir(parents=True, exist_ok=True)
        config_path = out / "config.ini"
        config_path.write_text(emit_config(config), encoding="utf-8")
        run_seed_processes(config_path, seeds, out, config.run.threads)
        rows = []
        for seed in seeds:
            metrics = json.loads((out / f"seed_{seed}" / "metrics.json").read_text(encoding="utf-8"))
            runtime = json.loads((out / f"seed_{seed}" / "runtime.json").read_text(encoding="utf-8"))
            metrics.pop("per_step", None)
            rows.append({**metrics, "mean_epoch_seconds": runtime["mean_epoch_seconds"]})
        frame = pd.DataFrame(rows)
    else:
        graph, dataset = _prepare(config)
        frame, runs = run_seeds(config, graph, dataset, seeds)
        for run in runs:
            seed_config = replace(config, run=replace(config.run, seeds=[run.seed],
                                                      out=str(out / f"seed_{run.seed}")))
            _write_run(out / f"seed_{run.seed}", seed_config, graph, run)
        (out / "config.ini").write_text(emit_config(config), encoding="utf-8")

    write_table(frame, out / "seed_metrics.csv")
    write_table(aggregate_seed_metrics(frame), out / "aggregate_metrics.csv")
    return out


def cmd_evaluate(config: RunConfig, checkpoint_path, horizon: int | None) -> dict:
    ckpt = load_checkpoint(checkpoint_path)
    horizon = horizon or ckpt.config.horizon.horizon
    graph, signal = load_data(config)
    check_compatible(ckpt, signal.nodes, signal.features)
    if ckpt.norm is None:
        raise CompatibilityError("checkpoint has no normalization record")
    model = restore_model(ckpt, horizon)
    scaled = SignalTensor(ckpt.norm.apply(signal.values))
    dataset = window_split(scaled, ckpt.config.horizon.history, horizon,
                           config.dataset.train_ratio, config.dataset.val_fraction)
    metrics = evaluate(model, dataset.split("test"), ckpt.norm)
    out = Path(config.run.out)
    payload = {"checkpoint": str(checkpoint_path), "horizon": horizon, **metrics.to_dict()}
    _write_json(out / "metrics.json", payload)
    write_table(step_metric_frame(metrics, config.dataset.step_minutes), out / "step_metrics.csv")
    logger.info("Evaluated %s: mae=%.4f rmse=%.4f acc=%.4f", checkpoint_path, metrics.mae,
                metrics.rmse, metrics.accuracy)
    return payload


def cmd_ablate(config: RunConfig, variants) -> pd.DataFrame:
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}, expected a subset of {VARIANTS}")
    graph, dataset = _prepare(config)
    frames = []
    for variant in variants:
        variant_config = replace(config, model=replace(config.model, variant=variant))
        frame, _ = run_seeds(variant_config, graph, dataset, config.run.seeds)
        frames.append(frame)
    seeds = pd.concat(frames, ignore_index=True)
    out = Path(config.run.out)
    write_table(seeds, out / "seed_metrics.csv")
    write_table(aggregate_seed_metrics(seeds), out / "aggregate_metrics.csv")
    table = ablation_table(seeds)
    write_table(table, out / "ablation.csv")
    return table


def cmd_analyze(config: RunConfig, checkpoint_path) -> Path:
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.variant == "none":
        raise CompatibilityError(f"{checkpoint_path}: checkpoint has no interaction matrices")
    model = restore_model(ckpt)
    run = config.run
    spectra_kind = "raw" if run.matrix == "auto" else run.matrix
    contrast_kind = "processed" if run.matrix == "auto" else run.matrix
    rule = ckpt.config.model.aggregate
    out = Path(run.out)

    spectral_set = interaction_set(model.interaction_matrices(spectra_kind), rule)
    spectrum, vectors, summary = [], [], {}
    for head, matrix in spectral_set.items():
        report = spectral_report(matrix, head, ckpt.config.optimizer.sparsity_threshold)
        spectrum.append(report.to_frame())
        table = eigenvector_table(report.decomposition)
        table.insert(0, "head", head)
        vectors.append(table)
        summary[head] = {"rank": report.rank, "sparsity": report.sparsity,
                         "frobenius": report.frobenius, "trace": float(matrix.trace()),
                         "eigenvalue_sum": float(report.decomposition.values.sum())}
        save_interaction_csv(matrix, _mkdir(out / "interaction") / f"{head}.csv")
        save_interaction_csv(heatmap_data(matrix, run.top_percent, run.binarize),
                             _mkdir(out / "heatmaps") / f"{head}.csv")
    write_table(pd.concat(spectrum, ignore_index=True), out / "spectrum.csv")
    write_table(pd.concat(vectors, ignore_index=True), out / "eigenvectors.csv")
    training = _training_summary(Path(checkpoint_path).parent / "interaction_series.csv")
    _write_json(out / "spectral_summary.json", {"matrix": spectra_kind, "heads": summary, "training": training})

    partitions = partitions_for_range(Graph(ckpt.adjacency), run.k_min, run.k_max, seed=0)
    contrast = contrast_table(interaction_set(model.interaction_matrices(contrast_kind), rule),
                              partitions, absolute=run.absolute)
    write_table(contrast, out / "contrast.csv")
    write_table(contrast_summary(contrast), out / "contrast_summary.csv")
    logger.info("Wrote analysis bundle to %s", out)
    return out


def _training_summary(path: Path) -> dict:
    """First and last epoch sparsity and norm per head, when the run left its series next to the checkpoint."""
    if not path.exists():
        logger.debug("No interaction series at %s", path)
        return {}
    series = read_table(path)
    out = {}
    for head, rows in series.groupby("head", sort=False):
        rows = rows.sort_values("epoch")
        first, last = rows.iloc[0], rows.iloc[-1]
        out[f"head_{int(head) + 1}"] = {
            "epochs": int(last["epoch"]),
            "sparsity_first": float(first["sparsity"]),
            "sparsity_last": float(last["sparsity"]),
            "frobenius_first": float(first["frobenius"]),
            "frobenius_last": float(last["frobenius"]),
        }
    return out


def _mkdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth(config: RunConfig) -> Path:
    ds = config.dataset
    graph, signal = synth_community_traffic(ds.nodes, ds.communities, ds.steps, ds.synth_seed)
    write_csv_dataset(graph, signal, config.run.out)
    logger.info("Wrote %d-node synthetic dataset to %s", graph.n, config.run.out)
    return Path(config.run.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        base = None
        if args.command in ("evaluate", "analyze"):
            ckpt_path = Path(args.checkpoint)
            if args.config is None:
                base = load_checkpoint(ckpt_path).config
            if args.out is None:
                args.out = str(ckpt_path.parent / ("evaluation" if args.command == "evaluate" else "analysis"))
        config = resolve_config(args, base)
        if args.command == "train":
            cmd_train(config)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.checkpoint, args.horizon)
        elif args.command == "ablate":
            cmd_ablate(config, [v.strip() for v in args.variants.split(",") if v.strip()])
        elif args.command == "analyze":
            cmd_analyze(config, args.checkpoint)
        elif args.command == "synth":
            cmd_synth(config)
    except ForecastError as e:
        logger.error("%s", e)
        return e.exit_code
    return 0

