import numpy as np
import pytest

from utils.config import ModelConfig, RunConfig, apply_overrides
from utils.graphio import prepare_dataset, synth_community_traffic
from utils.model import build_model


@pytest.fixture
def tiny_graph():
    """Six-node, two-community graph with a 40-step signal."""
    return synth_community_traffic(6, 2, 40, seed=3)


@pytest.fixture
def make_model(tiny_graph):
    """Factory for small models; keyword arguments go to ModelConfig."""
    graph, signal = tiny_graph

    def _make(horizon=2, seed=0, **overrides):
        settings = dict(heads=2, head_dim=4, hidden=8, dropout=0.0, clusters=2)
        settings.update(overrides)
        cfg = ModelConfig(**settings)
        return build_model(cfg, graph, signal.values[:30], 1, horizon, seed)

    return _make


@pytest.fixture
def small_run_config(tmp_path):
    """A run configuration small enough to train in a few seconds."""
    return apply_overrides(RunConfig(), {
        "dataset.nodes": 8,
        "dataset.communities": 2,
        "dataset.steps": 80,
        "model.heads": 2,
        "model.head_dim": 4,
        "model.hidden": 8,
        "model.clusters": 2,
        "optimizer.epochs": 4,
        "optimizer.batch_size": 16,
        "optimizer.lr": 1e-2,
        "horizon.history": 4,
        "horizon.horizon": 1,
        "run.out": str(tmp_path / "run"),
        "run.k_max": 4,
    })


@pytest.fixture
def small_dataset(small_run_config):
    ds = small_run_config.dataset
    graph, signal = synth_community_traffic(ds.nodes, ds.communities, ds.steps, ds.synth_seed)
    dataset = prepare_dataset(signal, small_run_config.horizon.history, small_run_config.horizon.horizon,
                              ds.train_ratio, ds.val_fraction)
    return graph, dataset


@pytest.fixture
def rng():
    return np.random.default_rng(42)
