"""Run configuration: dataclass tree <-> sectioned INI text."""
from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class DatasetConfig:
    source: str = "synth"  # synth | csv
    adjacency: str = ""
    speeds: str = ""
    missing: str = ""
    zeros_as_missing: bool = False
    nodes: int = 20
    communities: int = 4
    steps: int = 400
    synth_seed: int = 7
    train_ratio: float = 0.8
    val_fraction: float = 0.1
    step_minutes: int = 15


@dataclass
class ModelConfig:
    variant: str = "learnable_sym"
    heads: int = 4
    head_dim: int = 32
    hidden: int = 128
    elu_alpha: float = 1.0
    leaky_slope: float = 0.2
    dropout: float = 0.3
    clusters: int = 10
    ln_eps: float = 1e-5
    norm_axis: str = "row"
    gru_bias: bool = False
    decode_mode: str = "iterative"
    aggregate: str = "mean"


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    lambda_sparse: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    teacher_forcing: str = "scheduled"
    tf_p0: float = 1.0
    tf_decay: float = 0.02
    sparsity_threshold: float = 1e-4


@dataclass
class HorizonConfig:
    history: int = 12
    horizon: int = 1


@dataclass
class RunSection:
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs/latest"
    threads: int = 1
    top_percent: float = 2.0
    binarize: bool = False
    matrix: str = "auto"  # auto: raw for spectra, processed for contrast
    absolute: bool = False
    k_min: int = 2
    k_max: int = 32


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    run: RunSection = field(default_factory=RunSection)


SECTIONS = ("dataset", "model", "optimizer", "horizon", "run")

_CHOICES = {
    "dataset.source": ("synth", "csv"),
    "model.variant": ("none", "learnable_sym", "adjacency", "weighted_adjacency",
                      "weighted_covariance", "spectral_block"),
    "model.norm_axis": ("row", "matrix"),
    "model.decode_mode": ("iterative", "one_shot"),
    "model.aggregate": ("mean", "sum"),
    "optimizer.teacher_forcing": ("off", "always", "scheduled"),
    "run.matrix": ("auto", "raw", "processed"),
}
_POSITIVE = {
    "dataset.nodes", "dataset.steps", "dataset.step_minutes", "model.heads", "model.head_dim",
    "model.hidden", "model.clusters", "model.ln_eps", "optimizer.lr", "optimizer.batch_size",
    "optimizer.epochs", "optimizer.patience", "optimizer.eps", "optimizer.sparsity_threshold",
    "horizon.history", "horizon.horizon", "run.threads",
}
_NON_NEGATIVE = {
    "optimizer.weight_decay", "optimizer.lambda_sparse", "optimizer.tf_decay",
    "model.elu_alpha", "model.leaky_slope",
}
_UNIT_OPEN = {"dataset.train_ratio"}
_UNIT_HALF_OPEN = {"dataset.val_fraction", "model.dropout", "optimizer.beta1", "optimizer.beta2"}
_BOOLEANS = {"true": True, "yes": True, "on": True, "1": True,
             "false": False, "no": False, "off": False, "0": False}


def _coerce(path: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() not in _BOOLEANS:
                raise ValueError(raw)
            return _BOOLEANS[raw.lower()]
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [int(s) for s in raw.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(path, f"cannot parse '{raw}' as {type(current).__name__}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def validate_config(config: RunConfig) -> RunConfig:
    """Range and choice checks; raises ConfigError naming the first bad field."""
    for section in SECTIONS:
        block = getattr(config, section)
        for f in fields(block):
            path = f"{section}.{f.name}"
            value = getattr(block, f.name)
            if path in _CHOICES and value not in _CHOICES[path]:
                raise ConfigError(path, f"'{value}' is not one of {_CHOICES[path]}")
            if path in _POSITIVE and not value > 0:
                raise ConfigError(path, f"must be > 0, got {value}")
            if path in _NON_NEGATIVE and value < 0:
                raise ConfigError(path, f"must be >= 0, got {value}")
            if path in _UNIT_OPEN and not 0 < value < 1:
                raise ConfigError(path, f"must be in (0, 1), got {value}")
            if path in _UNIT_HALF_OPEN and not 0 <= value < 1:
                raise ConfigError(path, f"must be in [0, 1), got {value}")
    if not 0 <= config.optimizer.tf_p0 <= 1:
        raise ConfigError("optimizer.tf_p0", f"must be in [0, 1], got {config.optimizer.tf_p0}")
    if not config.run.seeds:
        raise ConfigError("run.seeds", "at least one seed is required")
    if not 0 < config.run.top_percent <= 100:
        raise ConfigError("run.top_percent", f"must be in (0, 100], got {config.run.top_percent}")
    if not 2 <= config.run.k_min <= config.run.k_max:
        raise ConfigError("run.k_min", f"need 2 <= k_min <= k_max, got {config.run.k_min}..{config.run.k_max}")
    if config.dataset.source == "csv" and not (config.dataset.adjacency and config.dataset.speeds):
        raise ConfigError("dataset.speeds", "csv source needs both adjacency and speeds paths")
    return config


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy with ``{"section.key": value}`` entries applied (strings are coerced)."""
    updated = {s: getattr(config, s) for s in SECTIONS}
    for path, value in overrides.items():
        if value is None:
            continue
        section, _, key = path.partition(".")
        if section not in updated:
            raise ConfigError(path, "unknown section")
        block = updated[section]
        if key not in {f.name for f in fields(block)}:
            raise ConfigError(path, "unknown key")
        current = getattr(block, key)
        if isinstance(value, str):
            value = _coerce(path, value, current)
        updated[section] = replace(block, **{key: value})
    return validate_config(RunConfig(**updated))


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("<file>", str(e).splitlines()[0]) from e
    overrides = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            overrides[f"{section}.{key}"] = raw
    return apply_overrides(RunConfig(), overrides)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    logger.debug("Reading config %s", path)
    return parse_config(path.read_text(encoding="utf-8"))


def emit_config(config: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        block = getattr(config, section)
        parser[section] = {f.name: _format(getattr(block, f.name)) for f in fields(block)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
