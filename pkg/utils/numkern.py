"""Dense float64 matrix kernel with hand-derived gradients.

Matrices are plain ``numpy.ndarray`` objects in float64. Row-wise operations
act on the last axis, so a leading batch axis is carried through untouched.
Each forward operation that the model differentiates has a matching
``*_backward`` function taking the forward input (or output) and the upstream
gradient.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Callable

import numpy as np

from utils.errors import DimensionError, UsageError

logger = logging.getLogger(__name__)


def as_mat(values) -> np.ndarray:
    """Coerce to a float64 array."""
    return np.asarray(values, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product; leading batch axes broadcast the numpy way."""
    a = as_mat(a)
    b = as_mat(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul shape mismatch", a.shape, b.shape)
    return a @ b


def row_softmax(m) -> np.ndarray:
    m = as_mat(m)
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(p, dp) -> np.ndarray:
    """Gradient through a row softmax given its output ``p``."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def layer_norm_rows(m, eps: float = 1e-5) -> np.ndarray:
    """(x - mean) / sqrt(var + eps) per row, population variance, no affine."""
    m = as_mat(m)
    if m.ndim < 1 or m.shape[-1] < 1:
        raise DimensionError("layer_norm_rows needs at least one column", m.shape)
    centered = m - np.mean(m, axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps)


def layer_norm_rows_backward(m, dy, eps: float = 1e-5) -> np.ndarray:
    m = as_mat(m)
    centered = m - np.mean(m, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    y = centered * inv_std
    return inv_std * (
        dy
        - np.mean(dy, axis=-1, keepdims=True)
        - y * np.mean(dy * y, axis=-1, keepdims=True)
    )


def elu(m, alpha: float = 1.0) -> np.ndarray:
    m = as_mat(m)
    # expm1 only ever sees non-positive entries
    return np.where(m > 0, m, alpha * np.expm1(np.minimum(m, 0.0)))


def elu_backward(m, dy, alpha: float = 1.0) -> np.ndarray:
    m = as_mat(m)
    return dy * np.where(m > 0, 1.0, alpha * np.exp(np.minimum(m, 0.0)))


def leaky_relu(m, slope: float = 0.2) -> np.ndarray:
    m = as_mat(m)
    return np.where(m > 0, m, slope * m)


def leaky_relu_backward(m, dy, slope: float = 0.2) -> np.ndarray:
    return dy * np.where(as_mat(m) > 0, 1.0, slope)


def sigmoid(m) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * as_mat(m)))


class ForwardRecord:
    """Named intermediates of one forward pass, in the order they were made.

    The module that produced the record registers its backward rule so that
    :func:`backward` can replay the pass in reverse.
    """

    def __init__(self, owner: str, backward_fn: Callable | None = None):
        self.owner = owner
        self.backward_fn = backward_fn
        self._values: OrderedDict[str, object] = OrderedDict()

    def put(self, name: str, value):
        self._values[name] = value
        return value

    def get(self, name: str):
        if name not in self._values:
            raise UsageError(f"{self.owner}: '{name}' was not recorded in the forward pass")
        return self._values[name]

    def __contains__(self, name):
        return name in self._values

    def names(self):
        return list(self._values)


class GradSet:
    """Gradients keyed by parameter name; shapes are pinned to the parameters."""

    def __init__(self, shapes: dict[str, tuple]):
        self._shapes = {k: tuple(v) for k, v in shapes.items()}
        self._grads = {k: np.zeros(v) for k, v in self._shapes.items()}

    @classmethod
    def like(cls, params: dict[str, np.ndarray]) -> "GradSet":
        return cls({k: v.shape for k, v in params.items()})

    def add(self, name: str, grad):
        if name not in self._shapes:
            raise UsageError(f"no parameter named '{name}'")
        grad = as_mat(grad)
        if grad.shape != self._shapes[name]:
            raise DimensionError(f"gradient for {name}", grad.shape, self._shapes[name])
        self._grads[name] += grad

    def __getitem__(self, name):
        if name not in self._grads:
            raise UsageError(f"no gradient recorded for '{name}'")
        return self._grads[name]

    def __contains__(self, name):
        return name in self._grads

    def items(self):
        return self._grads.items()

    def keys(self):
        return self._grads.keys()

    def first_non_finite(self):
        """Name of the first gradient holding NaN/Inf, or None."""
        for name, g in self._grads.items():
            if not np.all(np.isfinite(g)):
                return name
        return None


def backward(record: ForwardRecord, upstream) -> GradSet:
    """Run the backward rule registered on ``record``."""
    if record.backward_fn is None:
        raise UsageError(f"{record.owner}: record has no backward rule")
    return record.backward_fn(record, upstream)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        plus = f()
        x[idx] = orig - step
        minus = f()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """||a - n|| / (||n|| + 1e-8) over the whole parameter."""
    analytic = as_mat(analytic)
    numeric = as_mat(numeric)
    return float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + 1e-8))
