"""Spatial layers: the interaction-matrix layer, masked GAT, and ablation variants.

Both layer classes share one calling convention so the model can drive them
the same way:

    ctx = layer.prepare()                  # once per model forward
    z, rec = layer.forward(x, ctx)         # once per time step
    dx = layer.backward(rec, dz, ctx, g)   # reverse order
    layer.finish(ctx, g)                   # once, pushes dP into raw params

For the interaction layer the per-head matrix is computed in ``prepare`` and
shared by every time step; the masked GAT recomputes attention per call.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils import numkern as nk
from utils.errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

VARIANTS = (
    "none",
    "learnable_sym",
    "adjacency",
    "weighted_adjacency",
    "weighted_covariance",
    "spectral_block",
)
LEARNABLE_VARIANTS = ("learnable_sym", "weighted_adjacency", "weighted_covariance")


def process_interaction(raw, eps: float = 1e-5, norm_axis: str = "row") -> np.ndarray:
    """softmax_rows(layer_norm(0.5 * (I + I^T)))."""
    raw = nk.as_mat(raw)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise DimensionError("interaction matrix must be square", raw.shape)
    sym = 0.5 * (raw + raw.T)
    return nk.row_softmax(_layer_norm(sym, eps, norm_axis))


def _layer_norm(sym, eps, norm_axis):
    if norm_axis == "row":
        return nk.layer_norm_rows(sym, eps)
    if norm_axis == "matrix":
        return nk.layer_norm_rows(sym.reshape(1, -1), eps).reshape(sym.shape)
    raise UsageError(f"unknown layer-norm axis '{norm_axis}'")


def process_interaction_backward(raw, dp, eps: float = 1e-5, norm_axis: str = "row") -> np.ndarray:
    """Gradient of process_interaction with respect to the raw matrix."""
    sym = 0.5 * (raw + raw.T)
    p = nk.row_softmax(_layer_norm(sym, eps, norm_axis))
    dnorm = nk.softmax_rows_backward(p, dp)
    if norm_axis == "row":
        dsym = nk.layer_norm_rows_backward(sym, dnorm, eps)
    else:
        dsym = nk.layer_norm_rows_backward(
            sym.reshape(1, -1), dnorm.reshape(1, -1), eps).reshape(sym.shape)
    return 0.5 * (dsym + dsym.T)


def symmetrized(raw) -> np.ndarray:
    raw = nk.as_mat(raw)
    return 0.5 * (raw + raw.T)


def dropout_mask(rate: float, seed, shape, training: bool = True) -> np.ndarray:
    """Inverted-dropout keep mask; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return np.ones(shape)
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def aggregate_interactions(matrices, rule: str = "mean") -> np.ndarray:
    stacked = np.stack([nk.as_mat(m) for m in matrices])
    if rule == "mean":
        return stacked.mean(axis=0)
    if rule == "sum":
        return stacked.sum(axis=0)
    raise UsageError(f"unknown aggregation rule '{rule}'")


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


@dataclass
class VariantSource:
    """What replaces the processed interaction matrix for one variant."""

    tag: str
    base: np.ndarray | None = None  # A, C or the clustered adjacency
    meta: dict = field(default_factory=dict)

    @property
    def weighted(self) -> bool:
        return self.tag in ("weighted_adjacency", "weighted_covariance")


def empirical_covariance(values) -> np.ndarray:
    """Population covariance between node series; features are averaged first."""
    values = nk.as_mat(values)
    series = values.mean(axis=2) if values.ndim == 3 else values
    return np.cov(series, rowvar=False, bias=True)


def clustered_adjacency(labels) -> np.ndarray:
    """1 where i != j share a cluster, else 0."""
    labels = np.asarray(labels)
    block = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(block, 0.0)
    return block


def build_variant(tag: str, graph=None, train_values=None, k: int = 10, seed: int = 0) -> VariantSource:
    """Resolve a variant tag into the matrix source the spatial layer uses."""
    if tag not in VARIANTS:
        raise UsageError(f"unknown variant '{tag}', expected one of {VARIANTS}")
    if tag in ("none", "learnable_sym"):
        return VariantSource(tag)
    if graph is None:
        raise UsageError(f"variant '{tag}' needs the graph")
    if tag in ("adjacency", "weighted_adjacency"):
        return VariantSource(tag, graph.adjacency.copy())
    if tag == "weighted_covariance":
        if train_values is None:
            raise UsageError("weighted_covariance needs the training signal")
        return VariantSource(tag, empirical_covariance(train_values))
    if k > graph.n or k < 1:
        raise UsageError(f"cluster count k={k} out of range for {graph.n} nodes")
    if k == 1:
        labels = np.zeros(graph.n, dtype=int)
    else:
        from utils.community import spectral_cluster
        labels = spectral_cluster(graph, k, seed).assignment
    return VariantSource(tag, clustered_adjacency(labels), {"k": k, "labels": labels})


class InterGatLayer:
    """Multi-head spatial layer mixing node features with an N x N matrix per head."""

    def __init__(self, n_nodes, in_features, heads=4, head_dim=32, elu_alpha=1.0,
                 source: VariantSource | None = None, rng=None, ln_eps=1e-5, norm_axis="row"):
        self.n = n_nodes
        self.in_features = in_features
        self.heads = heads
        self.head_dim = head_dim
        self.elu_alpha = elu_alpha
        self.source = source or VariantSource("learnable_sym")
        if self.source.tag == "none":
            raise UsageError("variant 'none' runs through BaseGatLayer")
        if self.source.base is not None and self.source.base.shape != (n_nodes, n_nodes):
            raise DimensionError("variant matrix", self.source.base.shape, (n_nodes, n_nodes))
        self.ln_eps = ln_eps
        self.norm_axis = norm_axis
        rng = rng if rng is not None else np.random.default_rng(0)

        self.params: dict[str, np.ndarray] = {}
        bound = 1.0 / np.sqrt(n_nodes)
        for k in range(heads):
            if self.source.tag == "learnable_sym":
                self.params[f"spatial.I.{k}"] = rng.uniform(-bound, bound, (n_nodes, n_nodes))
            elif self.source.weighted:
                self.params[f"spatial.M.{k}"] = np.ones((n_nodes, n_nodes))
            self.params[f"spatial.W.{k}"] = _glorot(rng, in_features, head_dim, (in_features, head_dim))

    @property
    def variant(self) -> str:
        return self.source.tag

    @property
    def out_features(self) -> int:
        return self.heads * self.head_dim

    def interaction_names(self) -> list[str]:
        """Names of the raw learnable interaction parameters (L1 targets)."""
        return [n for n in self.params if n.startswith(("spatial.I.", "spatial.M."))]

    def raw_matrices(self) -> list[np.ndarray]:
        """Per-head matrix before row normalization (symmetrized raw I for the learnable case)."""
        out = []
        for k in range(self.heads):
            if self.source.tag == "learnable_sym":
                out.append(symmetrized(self.params[f"spatial.I.{k}"]))
            else:
                out.append(self.effective_matrix(k))
        return out

    def effective_matrix(self, k: int) -> np.ndarray:
        if self.source.tag == "learnable_sym":
            return process_interaction(self.params[f"spatial.I.{k}"], self.ln_eps, self.norm_axis)
        if self.source.weighted:
            return self.params[f"spatial.M.{k}"] * self.source.base
        return self.source.base

    def prepare(self) -> dict:
        return {"P": [self.effective_matrix(k) for k in range(self.heads)],
                "dP": [np.zeros((self.n, self.n)) for _ in range(self.heads)]}

    def forward(self, x, ctx=None):
        x = nk.as_mat(x)
        if x.shape[-2:] != (self.n, self.in_features):
            raise DimensionError("spatial input", x.shape[-2:], (self.n, self.in_features))
        ctx = ctx if ctx is not None else self.prepare()
        rec = nk.ForwardRecord("intergat")
        rec.put("x", x)
        outs = []
        for k in range(self.heads):
            h = rec.put(f"h.{k}", nk.matmul(x, self.params[f"spatial.W.{k}"]))
            m = rec.put(f"m.{k}", ctx["P"][k] @ h)
            outs.append(nk.elu(m, self.elu_alpha))
        return np.concatenate(outs, axis=-1), rec

    def backward(self, rec, dz, ctx, grads: nk.GradSet):
        x = rec.get("x")
        xs = x.reshape(-1, self.n, self.in_features)
        dx = np.zeros_like(x)
        d = self.head_dim
        for k in range(self.heads):
            h = rec.get(f"h.{k}")
            dm = nk.elu_backward(rec.get(f"m.{k}"), dz[..., k * d:(k + 1) * d], self.elu_alpha)
            dms = dm.reshape(-1, self.n, d)
            ctx["dP"][k] += np.einsum("snf,smf->nm", dms, h.reshape(-1, self.n, d))
            dh = ctx["P"][k].T @ dm
            w = self.params[f"spatial.W.{k}"]
            grads.add(f"spatial.W.{k}", np.einsum("snf,sng->fg", xs, dh.reshape(-1, self.n, d)))
            dx += dh @ w.T
        return dx

    def finish(self, ctx, grads: nk.GradSet):
        for k in range(self.heads):
            if self.source.tag == "learnable_sym":
                raw = self.params[f"spatial.I.{k}"]
                grads.add(f"spatial.I.{k}", process_interaction_backward(
                    raw, ctx["dP"][k], self.ln_eps, self.norm_axis))
            elif self.source.weighted:
                grads.add(f"spatial.M.{k}", ctx["dP"][k] * self.source.base)

    def parameter_count(self) -> int:
        per_head = self.in_features * self.head_dim
        if self.source.tag in LEARNABLE_VARIANTS:
            per_head += self.n * self.n
        return self.heads * per_head


class BaseGatLayer:
    """Masked pairwise attention over the edges of a fixed adjacency matrix."""

    def __init__(self, adjacency, in_features, heads=4, head_dim=32, elu_alpha=1.0,
                 slope=0.2, rng=None):
        adjacency = nk.as_mat(adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DimensionError("adjacency must be square", adjacency.shape)
        self.n = adjacency.shape[0]
        self.in_features = in_features
        self.heads = heads
        self.head_dim = head_dim
        self.elu_alpha = elu_alpha
        self.slope = slope
        self.set_adjacency(adjacency)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        for k in range(heads):
            self.params[f"spatial.W.{k}"] = _glorot(rng, in_features, head_dim, (in_features, head_dim))
            self.params[f"spatial.a.{k}"] = _glorot(rng, 2 * head_dim, 1, (2 * head_dim,))

    variant = "none"

    def set_adjacency(self, adjacency):
        """Edge mask from A > 0; isolated nodes get a self-loop so softmax is defined."""
        adjacency = nk.as_mat(adjacency)
        if adjacency.shape != (self.n, self.n):
            raise DimensionError("adjacency", adjacency.shape, (self.n, self.n))
        self.mask = adjacency > 0
        isolated = ~self.mask.any(axis=1)
        if isolated.any():
            logger.debug("Adding self-loops to %d isolated nodes", int(isolated.sum()))
            self.mask[isolated, isolated] = True

    @property
    def out_features(self) -> int:
        return self.heads * self.head_dim

    def interaction_names(self) -> list[str]:
        return []

    def prepare(self) -> dict:
        return {}

    def attention(self, x, k):
        """Attention weights of head ``k`` for input ``x``; zero off the mask."""
        h = nk.matmul(x, self.params[f"spatial.W.{k}"])
        a = self.params[f"spatial.a.{k}"]
        pre = (h @ a[:self.head_dim])[..., :, None] + (h @ a[self.head_dim:])[..., None, :]
        logits = np.where(self.mask, nk.leaky_relu(pre, self.slope), -np.inf)
        return h, pre, nk.row_softmax(logits)

    def forward(self, x, ctx=None):
        x = nk.as_mat(x)
        if x.shape[-2:] != (self.n, self.in_features):
            raise DimensionError("spatial input", x.shape[-2:], (self.n, self.in_features))
        rec = nk.ForwardRecord("basegat")
        rec.put("x", x)
        outs = []
        for k in range(self.heads):
            h, pre, alpha = self.attention(x, k)
            rec.put(f"h.{k}", h)
            rec.put(f"pre.{k}", pre)
            rec.put(f"alpha.{k}", alpha)
            m = rec.put(f"m.{k}", alpha @ h)
            outs.append(nk.elu(m, self.elu_alpha))
        return np.concatenate(outs, axis=-1), rec

    def backward(self, rec, dz, ctx, grads: nk.GradSet):
        x = rec.get("x")
        xs = x.reshape(-1, self.n, self.in_features)
        dx = np.zeros_like(x)
        d = self.head_dim
        for k in range(self.heads):
            h, pre, alpha = rec.get(f"h.{k}"), rec.get(f"pre.{k}"), rec.get(f"alpha.{k}")
            a = self.params[f"spatial.a.{k}"]
            w = self.params[f"spatial.W.{k}"]
            dm = nk.elu_backward(rec.get(f"m.{k}"), dz[..., k * d:(k + 1) * d], self.elu_alpha)
            dalpha = dm @ np.swapaxes(h, -1, -2)
            dh = np.swapaxes(alpha, -1, -2) @ dm
            dpre = nk.leaky_relu_backward(pre, nk.softmax_rows_backward(alpha, dalpha), self.slope)
            dpre = np.where(self.mask, dpre, 0.0)
            dsrc = dpre.sum(axis=-1)
            ddst = dpre.sum(axis=-2)
            hs = h.reshape(-1, self.n, d)
            grads.add(f"spatial.a.{k}", np.concatenate([
                np.einsum("sn,snf->f", dsrc.reshape(-1, self.n), hs),
                np.einsum("sn,snf->f", ddst.reshape(-1, self.n), hs),
            ]))
            dh = dh + dsrc[..., None] * a[:d] + ddst[..., None] * a[d:]
            grads.add(f"spatial.W.{k}", np.einsum("snf,sng->fg", xs, dh.reshape(-1, self.n, d)))
            dx += dh @ w.T
        return dx

    def finish(self, ctx, grads):
        pass

    def raw_matrices(self):
        return []

    def parameter_count(self) -> int:
        return self.heads * (self.in_features * self.head_dim + 2 * self.head_dim)


def intergat_forward(layer: InterGatLayer, x) -> np.ndarray:
    """Z = concat_k ELU(P_k X W_k)."""
    z, _ = layer.forward(x)
    return z


def basegat_forward(layer: BaseGatLayer, x, adjacency=None) -> np.ndarray:
    if adjacency is not None:
        layer.set_adjacency(adjacency)
    z, _ = layer.forward(x)
    return z


def save_interaction_csv(matrix, path):
    pd.DataFrame(nk.as_mat(matrix)).to_csv(path, header=False, index=False)
