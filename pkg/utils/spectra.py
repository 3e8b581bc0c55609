"""Spectral diagnostics of interaction matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils import numkern as nk
from utils.errors import DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class EigenDecomp:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # unit columns
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _off_sq(a) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sum(off * off))


def sym_eig(m, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomp:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Pairs (p, q) are visited row by row in every sweep until the off-diagonal
    Frobenius norm drops below ``tol`` times the norm of the input.
    """
    a = nk.as_mat(m).copy()
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("sym_eig needs a square matrix", a.shape)
    n = a.shape[0]
    asym = float(np.max(np.abs(a - a.T))) if n else 0.0
    if asym > 1e-9:
        logger.warning("Matrix is not symmetric (max |M - M^T| = %.3g), symmetrizing", asym)
        a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(float(np.linalg.norm(a)), np.finfo(float).tiny)

    target = (tol * scale) ** 2
    sweep = 0
    while _off_sq(a) > target:
        if sweep == max_sweeps:
            raise NumericError(f"Jacobi did not converge after {max_sweeps} sweeps "
                               f"(off-diagonal residual {np.sqrt(_off_sq(a)):.3e})")
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values, v = values[order], v[:, order]
    # largest-magnitude component positive
    lead = np.abs(v).argmax(axis=0)
    flip = v[lead, np.arange(n)] < 0
    v[:, flip] *= -1.0
    logger.debug("Jacobi converged in %d sweeps for N=%d", sweep, n)
    return EigenDecomp(values, v, sweep)


def dirichlet_energy(v, i_sym) -> float:
    """v^T (D - I) v with D the diagonal of row sums; may be negative."""
    v = nk.as_mat(v).ravel()
    i_sym = nk.as_mat(i_sym)
    if i_sym.shape != (v.size, v.size):
        raise DimensionError("dirichlet_energy vector vs matrix", v.shape, i_sym.shape)
    laplacian = np.diag(i_sym.sum(axis=1)) - i_sym
    return float(v @ laplacian @ v)


def ipr(v, strict: bool = False) -> float:
    """Sum of fourth powers of a unit vector."""
    v = nk.as_mat(v).ravel()
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise UsageError("ipr of the zero vector is undefined")
    if abs(norm - 1.0) > 1e-9:
        if strict:
            raise UsageError(f"ipr needs a unit vector, got norm {norm:.6g}")
        logger.warning("Normalizing vector with norm %.6g before IPR", norm)
        v = v / norm
    return float(np.sum(v ** 4))


def sparsity_fraction(m, threshold: float = 1e-4) -> float:
    if threshold <= 0:
        raise UsageError(f"sparsity threshold must be > 0, got {threshold}")
    return float(np.mean(np.abs(nk.as_mat(m)) < threshold))


def numeric_rank(eigs, tol: float = 1e-8) -> int:
    mags = np.abs(nk.as_mat(eigs))
    top = float(mags.max()) if mags.size else 0.0
    if top == 0.0:
        return 0
    return int(np.sum(mags > tol * top))


def frobenius(m) -> float:
    return float(np.linalg.norm(nk.as_mat(m)))


@dataclass
class SpectralReport:
    head: str
    decomposition: EigenDecomp
    energies: np.ndarray
    iprs: np.ndarray
    rank: int
    sparsity: float
    frobenius: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "head": self.head,
            "index": np.arange(len(self.energies)),
            "eigenvalue": self.decomposition.values,
            "dirichlet_energy": self.energies,
            "ipr": self.iprs,
        })


def spectral_report(m, head: str = "0", threshold: float = 1e-4, rank_tol: float = 1e-8) -> SpectralReport:
    m = nk.as_mat(m)
    decomp = sym_eig(m)
    sym = 0.5 * (m + m.T)
    energies = np.array([dirichlet_energy(decomp.vectors[:, k], sym) for k in range(m.shape[0])])
    iprs = np.array([ipr(decomp.vectors[:, k]) for k in range(m.shape[0])])
    return SpectralReport(head, decomp, energies, iprs, numeric_rank(decomp.values, rank_tol),
                          sparsity_fraction(m, threshold), frobenius(m))


def analyze_matrix(m, head: str = "0") -> pd.DataFrame:
    """One row per eigenpair: (head, index, eigenvalue, dirichlet_energy, ipr)."""
    return spectral_report(m, head).to_frame()


def eigenvector_table(decomp: EigenDecomp, top: int = 3) -> pd.DataFrame:
    """Node components of the ``top`` eigenvectors with the largest eigenvalues, long format."""
    n = len(decomp.values)
    top = min(top, n)
    rows = []
    for rank, idx in enumerate(range(n - 1, n - 1 - top, -1), start=1):
        for node in range(n):
            rows.append({"rank": rank, "index": idx, "eigenvalue": decomp.values[idx],
                         "node": node, "component": decomp.vectors[node, idx]})
    return pd.DataFrame(rows, columns=["rank", "index", "eigenvalue", "node", "component"])


def heatmap_data(m, top_percent: float = 2.0, binarize: bool = False) -> np.ndarray:
    """Min-max scaled copy of ``m`` with everything outside the top ``top_percent`` zeroed."""
    if not 0 < top_percent <= 100:
        raise UsageError(f"top_percent must be in (0, 100], got {top_percent}")
    m = nk.as_mat(m)
    lo, hi = float(m.min()), float(m.max())
    scaled = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    cutoff = np.percentile(scaled, 100.0 - top_percent)
    kept = scaled >= cutoff
    if binarize:
        return kept.astype(np.float64)
    return np.where(kept, scaled, 0.0)
