"""Loading, normalizing, windowing and synthesizing traffic datasets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from utils.errors import DataError, DimensionError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class Graph:
    adjacency: np.ndarray
    labels: np.ndarray | None = None  # planted communities, synthetic data only

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.ndim != 2 or self.adjacency.shape[0] != self.adjacency.shape[1]:
            raise DimensionError("adjacency must be square", self.adjacency.shape)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def components(self) -> list[np.ndarray]:
        """Node index arrays of the connected components (edges read undirected)."""
        count, labels = connected_components(csr_matrix(self.adjacency), directed=False)
        return [np.flatnonzero(labels == c) for c in range(count)]

    def is_connected(self) -> bool:
        return len(self.components()) == 1

    def subgraph(self, nodes) -> "Graph":
        nodes = np.asarray(nodes)
        labels = None if self.labels is None else self.labels[nodes]
        return Graph(self.adjacency[np.ix_(nodes, nodes)], labels)


@dataclass
class SignalTensor:
    values: np.ndarray  # (steps, nodes, features)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise DimensionError("signal must be steps x nodes x features", self.values.shape)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> int:
        return self.values.shape[1]

    @property
    def features(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class NormRecord:
    minimum: float
    maximum: float

    @property
    def scale(self) -> float:
        return self.maximum - self.minimum

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.minimum) / self.scale

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.minimum


@dataclass
class WindowedDataset:
    inputs: np.ndarray   # (windows, history, nodes, features)
    targets: np.ndarray  # (windows, horizon, nodes, features)
    starts: np.ndarray   # first input frame of every window
    n_train: int
    n_val: int
    norm: NormRecord | None = None
    meta: dict = field(default_factory=dict)

    @property
    def history(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    @property
    def nodes(self) -> int:
        return self.inputs.shape[2]

    @property
    def features(self) -> int:
        return self.inputs.shape[3]

    def _slice(self, name):
        fit_end = self.n_train - self.n_val
        return {
            "train": slice(0, self.n_train),
            "fit": slice(0, fit_end),
            "val": slice(fit_end, self.n_train),
            "test": slice(self.n_train, len(self.starts)),
        }[name]

    def split(self, name: str):
        """(inputs, targets) for 'train', 'fit' (train minus validation), 'val' or 'test'."""
        s = self._slice(name)
        return self.inputs[s], self.targets[s]

    def count(self, name: str) -> int:
        s = self._slice(name)
        return s.stop - s.start

    def train_frames(self) -> np.ndarray:
        """Every frame touched by a training window, in time order."""
        last = self.n_train - 1
        return np.concatenate([self.inputs[:self.n_train, 0], self.inputs[last, 1:], self.targets[last]])


def _read_numeric_csv(path, sentinel=""):
    """Parse a numeric CSV; cells equal to ``sentinel`` come back as NaN."""
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                          skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DataError(f"row length mismatch ({e})", path) from e
    except pd.errors.EmptyDataError as e:
        raise DataError("file is empty", path) from e

    offset = 1
    first = pd.to_numeric(raw.iloc[0].str.strip(), errors="coerce")
    if first.isna().any() and (raw.iloc[0].str.strip() != sentinel).all():
        logger.debug("Skipping header row in %s", path)
        raw = raw.iloc[1:].reset_index(drop=True)
        offset = 2

    if raw.isna().any().any():
        line = int(raw.isna().any(axis=1).to_numpy().argmax()) + offset
        raise DataError("row length mismatch", path, line)

    stripped = raw.apply(lambda col: col.str.strip())
    missing = stripped == sentinel
    numeric = stripped.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & ~missing
    if bad.any().any():
        row = int(bad.any(axis=1).to_numpy().argmax())
        col = int(bad.iloc[row].to_numpy().argmax())
        raise DataError(f"unparseable number '{raw.iat[row, col]}'", path, row + offset)
    return numeric.to_numpy(dtype=np.float64)


def interpolate_missing(frame: pd.DataFrame) -> pd.DataFrame:
    """Linear interpolation along time per node; edge gaps take the nearest value."""
    empty = frame.columns[frame.isna().all()]
    if len(empty):
        raise DataError(f"nodes with no observations: {list(empty)}")
    return frame.interpolate(method="linear", axis=0, limit_direction="both")


def load_csv_dataset(adjacency_path, speeds_path, missing="", zeros_as_missing=False):
    """Read an adjacency CSV (N rows) and a speed CSV (T rows x N columns)."""
    adjacency = _read_numeric_csv(adjacency_path, sentinel=None)
    if adjacency.shape[0] != adjacency.shape[1]:
        raise DataError(f"adjacency is not square: {adjacency.shape}", adjacency_path)
    if (adjacency < 0).any():
        raise DataError("adjacency has negative entries", adjacency_path)
    graph = Graph(adjacency)
    n = graph.n

    speeds = _read_numeric_csv(speeds_path, sentinel=missing)
    if speeds.shape[1] != n:
        if speeds.shape[0] == n:
            logger.info("Speed matrix is node-major, transposing %s", speeds.shape)
            speeds = speeds.T
        else:
            raise DataError(f"speed matrix {speeds.shape} does not match {n} nodes", speeds_path)
    if zeros_as_missing:
        speeds = np.where(speeds == 0, np.nan, speeds)

    frame = pd.DataFrame(speeds)
    gaps = int(frame.isna().sum().sum())
    if gaps:
        logger.info("Interpolating %d missing readings", gaps)
        frame = interpolate_missing(frame)

    parts = graph.components()
    if len(parts) > 1:
        logger.warning("Graph has %d connected components; clustering runs per component", len(parts))
    logger.info("Loaded %d nodes x %d steps", n, frame.shape[0])
    return graph, SignalTensor(frame.to_numpy(dtype=np.float64))


def normalize(signal: SignalTensor, fit_steps: int | None = None):
    """Global min-max scaling fitted on the first ``fit_steps`` frames (all if None)."""
    fit = signal.values if fit_steps is None else signal.values[:fit_steps]
    lo, hi = float(np.min(fit)), float(np.max(fit))
    if not hi > lo:
        raise DataError("degenerate data: signal is constant over the fitting range")
    record = NormRecord(lo, hi)
    return SignalTensor(record.apply(signal.values)), record


def _window_counts(steps, history, horizon, ratio, val_fraction):
    if history < 1 or horizon < 1:
        raise UsageError(f"history and horizon must be >= 1 (got {history}, {horizon})")
    if not 0 < ratio < 1:
        raise UsageError(f"train ratio must be in (0, 1), got {ratio}")
    needed = history + horizon + 1
    if steps < needed:
        raise DataError(f"series has {steps} steps, need at least {needed}")
    windows = steps - history - horizon
    n_train = int(windows * ratio)
    if n_train < 1 or n_train >= windows:
        raise DataError(f"{windows} windows cannot be split with ratio {ratio}")
    n_val = 0
    if val_fraction > 0 and n_train >= 2:
        n_val = min(max(1, int(round(n_train * val_fraction))), n_train - 1)
    return windows, n_train, n_val


def window_split(signal: SignalTensor, history: int, horizon: int, ratio: float = 0.8,
                 val_fraction: float = 0.1) -> WindowedDataset:
    """Stride-1 windows, split chronologically into train (with trailing validation) and test."""
    windows, n_train, n_val = _window_counts(signal.steps, history, horizon, ratio, val_fraction)
    values = signal.values
    starts = np.arange(windows)
    inputs = np.stack([values[s:s + history] for s in starts])
    targets = np.stack([values[s + history:s + history + horizon] for s in starts])
    return WindowedDataset(inputs, targets, starts, n_train, n_val)


def prepare_dataset(signal: SignalTensor, history: int, horizon: int, ratio: float = 0.8,
                    val_fraction: float = 0.1) -> WindowedDataset:
    """Normalize on the frames the training windows touch, then window."""
    _, n_train, _ = _window_counts(signal.steps, history, horizon, ratio, val_fraction)
    fit_steps = n_train - 1 + history + horizon
    scaled, record = normalize(signal, fit_steps)
    dataset = window_split(scaled, history, horizon, ratio, val_fraction)
    dataset.norm = record
    dataset.meta["fit_steps"] = fit_steps
    return dataset


def synth_community_traffic(nodes: int, communities: int, steps: int, seed: int,
                            p_in: float = 0.6, p_out: float = 0.05,
                            noise: float = 0.03, period: int = 48):
    """Stochastic block model graph with one phase-shifted daily pattern per community."""
    if communities < 2 or communities > nodes:
        raise UsageError(f"need 2 <= communities <= nodes, got {communities} for {nodes} nodes")
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(len(b), c) for c, b in
                             enumerate(np.array_split(np.arange(nodes), communities))])

    same = labels[:, None] == labels[None, :]
    draw = rng.random((nodes, nodes)) < np.where(same, p_in, p_out)
    upper = np.triu(draw, k=1)
    adjacency = (upper | upper.T).astype(np.float64)

    t = np.arange(steps)[:, None]
    phases = 2 * np.pi * np.arange(communities) / communities
    base = 0.3 * np.sin(2 * np.pi * t / period + phases[None, :])
    amp = rng.uniform(0.8, 1.0, nodes)
    offset = rng.normal(0.0, 0.02, nodes)
    values = 0.5 + amp * base[:, labels] + offset + noise * rng.normal(size=(steps, nodes))
    values = np.clip(values, 0.0, 1.0)
    return Graph(adjacency, labels), SignalTensor(values)


def write_csv_dataset(graph: Graph, signal: SignalTensor, directory):
    """Write adjacency.csv and speeds.csv in the schema load_csv_dataset reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    adj_path = directory / "adjacency.csv"
    speed_path = directory / "speeds.csv"
    pd.DataFrame(graph.adjacency).to_csv(adj_path, header=False, index=False)
    pd.DataFrame(signal.values[:, :, 0]).to_csv(speed_path, header=False, index=False)
    if graph.labels is not None:
        pd.DataFrame({"node": np.arange(graph.n), "community": graph.labels}).to_csv(
            directory / "communities.csv", index=False)
    return adj_path, speed_path
