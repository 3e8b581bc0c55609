"""Seed aggregation, ablation and per-step tables."""
from __future__ import annotations

import logging

import pandas as pd

logger = logging.getLogger(__name__)

METRICS = ("rmse", "mae", "accuracy", "r2", "var")

# Row order and labels of the ablation table
ABLATION_ORDER = (
    "none",
    "adjacency",
    "weighted_adjacency",
    "weighted_covariance",
    "spectral_block",
    "learnable_sym",
)
ABLATION_LABELS = {
    "none": "No bias (dense attention)",
    "adjacency": "Adjacency",
    "weighted_adjacency": "Trainable weighted adjacency",
    "weighted_covariance": "Trainable weighted covariance",
    "spectral_block": "Spectral clustered adjacency",
    "learnable_sym": "Learnable, symmetrized",
}


def format_mean_std(mean: float | None, std: float | None, digits: int = 4) -> str:
    """'m ± s', or just 'm' without a spread."""
    if mean is None or pd.isna(mean):
        return "N/A"
    if std is None or pd.isna(std):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def horizon_minutes(steps, step_minutes: int) -> list[int]:
    return [int(s) * int(step_minutes) for s in steps]


def aggregate_seed_metrics(frame: pd.DataFrame) -> pd.DataFrame:
    """One row per (variant, metric) with mean, sample std and the formatted pair."""
    rows = []
    for variant, group in frame.groupby("variant", sort=False):
        if len(group) == 1:
            logger.warning("Only one seed for %s, std reported as 0", variant)
        for metric in METRICS:
            values = group[metric].astype(float)
            mean = float(values.mean())
            std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            rows.append({"variant": variant, "metric": metric, "mean": mean, "std": std,
                         "formatted": format_mean_std(mean, std)})
    return pd.DataFrame(rows, columns=["variant", "metric", "mean", "std", "formatted"])


def ablation_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean MAE, accuracy and RMSE per variant in the fixed row order."""
    grouped = frame.groupby("variant").agg(
        mae=("mae", "mean"),
        mae_std=("mae", "std"),
        accuracy=("accuracy", "mean"),
        accuracy_std=("accuracy", "std"),
        rmse=("rmse", "mean"),
    )
    order = [v for v in ABLATION_ORDER if v in grouped.index]
    table = grouped.loc[order].reset_index()
    table["label"] = table["variant"].map(ABLATION_LABELS)
    table["mae_formatted"] = [format_mean_std(m, s) for m, s in zip(table["mae"], table["mae_std"])]
    table["accuracy_formatted"] = [format_mean_std(m, s)
                                   for m, s in zip(table["accuracy"], table["accuracy_std"])]
    return table


def step_metric_frame(report, step_minutes: int) -> pd.DataFrame:
    """Per-step breakdown of a MetricReport; the joint horizon block is step 0."""
    rows = [{"step": 0, "minutes": 0, **{m: getattr(report, m) for m in METRICS}}]
    steps = report.per_step or [report]
    minutes = horizon_minutes(range(1, len(steps) + 1), step_minutes)
    for i, (step, mins) in enumerate(zip(steps, minutes), start=1):
        rows.append({"step": i, "minutes": mins, **{m: getattr(step, m) for m in METRICS}})
    return pd.DataFrame(rows)
