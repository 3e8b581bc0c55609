"""Versioned JSON checkpoints: parameters, config text, normalization and graph."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from utils.config import RunConfig, emit_config, parse_config
from utils.errors import CompatibilityError, DataError
from utils.graphio import Graph, NormRecord
from utils.intergat import VariantSource

logger = logging.getLogger(__name__)

FORMAT = "intergat-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict
    adjacency: np.ndarray
    nodes: int
    features: int
    norm: NormRecord | None = None
    variant_base: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.config.model.variant

    def interaction_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("spatial.I.", "spatial.M."))]


def _pack(array) -> dict:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "data": array.ravel().tolist()}


def _unpack(entry, name) -> np.ndarray:
    try:
        data = np.asarray(entry["data"], dtype=np.float64)
        return data.reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise CompatibilityError(f"checkpoint entry '{name}' is malformed: {e}") from e


def save_checkpoint(path, model, run_config: RunConfig, graph: Graph, norm: NormRecord | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    source = getattr(model.spatial, "source", None)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "variant": model.variant,
        "nodes": model.n,
        "features": model.features,
        "config": emit_config(run_config),
        "norm": None if norm is None else {"min": norm.minimum, "max": norm.maximum},
        "adjacency": _pack(graph.adjacency),
        "variant_base": None if source is None or source.base is None else _pack(source.base),
        "params": {name: _pack(value) for name, value in model.params.items()},
        "meta": meta or {},
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    logger.info("Wrote checkpoint %s (%d tensors)", path, len(doc["params"]))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError("checkpoint not found", path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CompatibilityError(f"{path}: not a checkpoint ({e.msg})") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CompatibilityError(f"{path}: unknown checkpoint format")
    if doc.get("version") != VERSION:
        raise CompatibilityError(f"{path}: checkpoint version {doc.get('version')} is not {VERSION}")
    try:
        config = parse_config(doc["config"])
        params = {name: _unpack(entry, name) for name, entry in doc["params"].items()}
        norm = None if doc["norm"] is None else NormRecord(doc["norm"]["min"], doc["norm"]["max"])
        base = None if doc.get("variant_base") is None else _unpack(doc["variant_base"], "variant_base")
        return Checkpoint(config, params, _unpack(doc["adjacency"], "adjacency"),
                          int(doc["nodes"]), int(doc["features"]), norm, base, doc.get("meta", {}))
    except KeyError as e:
        raise CompatibilityError(f"{path}: checkpoint is missing {e}") from e


def check_compatible(ckpt: Checkpoint, nodes: int, features: int):
    if (ckpt.nodes, ckpt.features) != (nodes, features):
        raise CompatibilityError(
            f"checkpoint expects {ckpt.nodes} nodes x {ckpt.features} features, "
            f"data has {nodes} x {features}")


def restore_model(ckpt: Checkpoint, horizon: int | None = None):
    """Rebuild the model the checkpoint was saved from and load its parameters."""
    from utils.model import build_model

    cfg = ckpt.config
    graph = Graph(ckpt.adjacency)
    source = None
    if cfg.model.variant != "none":
        source = VariantSource(cfg.model.variant, ckpt.variant_base)
    horizon = horizon or cfg.horizon.horizon
    model = build_model(cfg.model, graph, None, ckpt.features, horizon, seed=0, source=source)
    if set(model.params) != set(ckpt.params):
        missing = sorted(set(model.params) ^ set(ckpt.params))
        raise CompatibilityError(f"checkpoint parameters do not match the model: {missing[:5]}")
    for name, value in ckpt.params.items():
        if model.params[name].shape != value.shape:
            raise CompatibilityError(f"{name}: checkpoint shape {value.shape} vs model {model.params[name].shape}")
        np.copyto(model.params[name], value)
    return model
