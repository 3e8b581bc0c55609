"""Column layout of every CSV table the pipeline writes."""
from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from utils.errors import DataError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

# dtypes applied when a table is read back
COLUMN_TYPES = {
    "epoch": "int64",
    "head": "str",
    "index": "int64",
    "node": "int64",
    "rank": "int64",
    "k": "int64",
    "seed": "int64",
    "step": "int64",
    "minutes": "int64",
    "variant": "str",
    "metric": "str",
    "flagged": "bool",
    "formatted": "str",
    "label": "str",
}

TABLES: dict[str, list[str]] = {
    "losses.csv": ["epoch", "train_loss", "task_loss", "sparse_loss", "val_loss", "val_mae"],
    "interaction_series.csv": ["epoch", "head", "sparsity", "frobenius"],
    "spectrum.csv": ["head", "index", "eigenvalue", "dirichlet_energy", "ipr"],
    "eigenvectors.csv": ["head", "rank", "index", "eigenvalue", "node", "component"],
    "contrast.csv": ["head", "k", "mu_intra", "mu_inter", "sigma_intra", "sigma_inter",
                     "contrast", "std", "flagged"],
    "contrast_summary.csv": ["head", "mean_contrast", "std_contrast", "k_count"],
    "seed_metrics.csv": ["seed", "variant", "rmse", "mae", "accuracy", "r2", "var", "mean_epoch_seconds"],
    "aggregate_metrics.csv": ["variant", "metric", "mean", "std", "formatted"],
    "step_metrics.csv": ["step", "minutes", "rmse", "mae", "accuracy", "r2", "var"],
    "ablation.csv": ["variant", "label", "mae", "accuracy", "rmse", "mae_formatted", "accuracy_formatted"],
}


def table_columns(path) -> list[str]:
    name = Path(path).name
    if name not in TABLES:
        raise DataError("no column layout for this table", path)
    return TABLES[name]


def write_table(frame: pd.DataFrame, path, columns: list[str] | None = None) -> Path:
    """Write ``frame`` with the documented column order for its file name."""
    path = Path(path)
    columns = columns or table_columns(path)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"table is missing columns {missing}", path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame[columns].to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return path


def read_table(path, columns: list[str] | None = None) -> pd.DataFrame:
    """Read a table written by write_table, checking its header."""
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path)
    columns = columns or table_columns(path)
    dtypes = {c: COLUMN_TYPES[c] for c in columns if c in COLUMN_TYPES}
    frame = pd.read_csv(path, dtype=dtypes, keep_default_na=True)
    if list(frame.columns) != columns:
        raise DataError(f"unexpected header {list(frame.columns)}", path, 1)
    return frame
