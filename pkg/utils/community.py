"""Spectral clustering of the road graph and intra/inter community contrast of interaction matrices."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from utils import numkern as nk
from utils.errors import DimensionError, UsageError
from utils.intergat import aggregate_interactions

logger = logging.getLogger(__name__)

CONTRAST_EPS = 1e-6


@dataclass
class Partition:
    k: int
    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.k):
            raise UsageError(f"cluster labels must lie in [0, {self.k})")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


@dataclass
class ContrastRow:
    head: str
    k: int
    mu_intra: float
    mu_inter: float
    sigma_intra: float
    sigma_inter: float
    contrast: float
    std: float
    flagged: bool = False


def _first_seen_labels(labels) -> np.ndarray:
    """Relabel so clusters are numbered in order of their first node."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(len(order), dtype=int)
    mapping[order] = np.arange(len(order))
    return mapping[np.searchsorted(np.unique(labels), labels)]


def _embed_and_split(adjacency, k: int, seed: int, n_init: int) -> np.ndarray:
    """Cluster labels of one connected graph: normalized-Laplacian embedding, row-normalized, k-means++."""
    n = adjacency.shape[0]
    if k == 1:
        return np.zeros(n, dtype=int)
    if k == n:
        return np.arange(n)
    degree = adjacency.sum(axis=1)
    inv_sqrt = np.zeros(n)
    np.divide(1.0, np.sqrt(degree), out=inv_sqrt, where=degree > 0)
    laplacian = np.eye(n) - inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]
    _, vectors = np.linalg.eigh(laplacian)
    embedding = vectors[:, :k]
    norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    embedding = np.divide(embedding, norms, out=np.zeros_like(embedding), where=norms > 0)
    return KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed).fit_predict(embedding)


def _clusters_per_component(sizes, k: int) -> np.ndarray:
    """One cluster per component, the rest handed to the component with the most nodes per cluster."""
    sizes = np.asarray(sizes)
    alloc = np.ones(len(sizes), dtype=int)
    for _ in range(k - len(sizes)):
        load = np.where(alloc < sizes, sizes / alloc, -1.0)
        alloc[int(np.argmax(load))] += 1
    return alloc


def spectral_cluster(graph, k: int, seed: int = 0, n_init: int = 50) -> Partition:
    """Spectral clustering of the road graph into ``k`` clusters.

    Each connected component is clustered on its own. When there are at least
    ``k`` components, the components themselves are the clusters and the
    smallest ones share the last label.
    """
    n = graph.n
    if not 2 <= k <= n:
        raise UsageError(f"cluster count k={k} out of range [2, {n}]")
    if k == n:
        return Partition(k, np.arange(n))

    parts = graph.components()
    count = len(parts)
    labels = np.empty(n, dtype=int)
    if count >= k:
        if count > k:
            logger.warning("%d components for k=%d; the smallest ones share a cluster", count, k)
        order = sorted(range(count), key=lambda c: -len(parts[c]))
        for rank, c in enumerate(order):
            labels[parts[c]] = min(rank, k - 1)
    else:
        if count > 1:
            logger.debug("Clustering %d components separately", count)
        offset = 0
        for nodes, k_c in zip(parts, _clusters_per_component([len(p) for p in parts], k)):
            sub = nk.as_mat(graph.subgraph(nodes).adjacency)
            sub = 0.5 * (sub + sub.T)
            labels[nodes] = offset + _embed_and_split(sub, int(k_c), seed, n_init)
            offset += int(k_c)

    labels = _first_seen_labels(labels)
    found = len(np.unique(labels))
    if found < k:
        logger.warning("k-means returned %d non-empty clusters for k=%d", found, k)
    return Partition(k, labels)


def partitions_for_range(graph, k_min: int = 2, k_max: int = 32, seed: int = 0) -> dict[int, Partition]:
    if k_max > graph.n:
        logger.warning("Clipping k_max=%d to the node count %d", k_max, graph.n)
        k_max = graph.n
    if k_min < 2 or k_min > k_max:
        raise UsageError(f"invalid cluster range {k_min}..{k_max}")
    return {k: spectral_cluster(graph, k, seed) for k in range(k_min, k_max + 1)}


def contrast_row(matrix, partition: Partition, head: str = "aggregate", absolute: bool = False,
                 eps: float = CONTRAST_EPS) -> ContrastRow:
    m = nk.as_mat(matrix)
    n = len(partition.assignment)
    if m.shape != (n, n):
        raise DimensionError("contrast matrix vs partition", m.shape, (n, n))
    if absolute:
        m = np.abs(m)
    labels = partition.assignment
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    intra, inter = m[same & off_diag], m[~same]
    if intra.size == 0 or inter.size == 0:
        logger.warning("Contrast row %s k=%d flagged: empty %s pool", head, partition.k,
                       "intra" if intra.size == 0 else "inter")
        nan = float("nan")
        return ContrastRow(head, partition.k, nan, nan, nan, nan, nan, nan, flagged=True)
    mu_i, mu_o = float(intra.mean()), float(inter.mean())
    s_i, s_o = float(intra.std()), float(inter.std())
    return ContrastRow(head, partition.k, mu_i, mu_o, s_i, s_o,
                       (mu_i - mu_o) / (mu_o + eps),
                       float(np.sqrt(s_i ** 2 + s_o ** 2)) / (mu_o + eps))


def interaction_set(matrices, rule: str = "mean") -> dict[str, np.ndarray]:
    """Per-head matrices keyed head_1..head_H plus their aggregate."""
    matrices = list(matrices)
    out = {f"head_{i + 1}": nk.as_mat(m) for i, m in enumerate(matrices)}
    if matrices:
        out["aggregate"] = aggregate_interactions(matrices, rule)
    return out


def contrast_table(matrices: dict, partitions: dict, absolute: bool = False) -> pd.DataFrame:
    rows = [asdict(contrast_row(m, partitions[k], head, absolute))
            for head, m in matrices.items() for k in sorted(partitions)]
    return pd.DataFrame(rows, columns=[f for f in ContrastRow.__dataclass_fields__])


def contrast_summary(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of Contrast_k across k per head, flagged rows excluded."""
    kept = table[~table["flagged"].astype(bool)]
    summary = kept.groupby("head", sort=False).agg(
        mean_contrast=("contrast", "mean"),
        std_contrast=("contrast", "std"),
        k_count=("k", "count"),
    )
    return summary.reset_index()
