"""Loss, optimizer, training loop and the forecast metric suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.metrics import (
    explained_variance_score,
    mean_absolute_error,
    mean_squared_error,
    r2_score,
)

from utils import numkern as nk
from utils.config import OptimConfig
from utils.errors import DataError, DimensionError, NumericError, UsageError
from utils.spectra import frobenius, sparsity_fraction
from utils.temporal import TeacherForcingPolicy

logger = logging.getLogger(__name__)


@dataclass
class LossReport:
    epoch: int
    task: float
    sparse: float
    val_loss: float = float("nan")
    val_mae: float = float("nan")

    @property
    def total(self) -> float:
        return self.task + self.sparse

    def to_row(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.total, "task_loss": self.task,
                "sparse_loss": self.sparse, "val_loss": self.val_loss, "val_mae": self.val_mae}


@dataclass
class MetricReport:
    rmse: float
    mae: float
    accuracy: float
    r2: float
    var: float
    per_step: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("rmse", "mae", "accuracy", "r2", "var")}
        if self.per_step:
            out["per_step"] = [m.to_dict() for m in self.per_step]
        return out


@dataclass
class RuntimeReport:
    epoch_seconds: list = field(default_factory=list)
    forward_seconds: list = field(default_factory=list)
    backward_seconds: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.epoch_seconds)

    @property
    def mean_epoch_seconds(self) -> float:
        return float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0

    @property
    def total_minutes(self) -> float:
        return float(np.sum(self.epoch_seconds)) / 60.0

    @property
    def mean_forward_seconds(self) -> float:
        return float(np.mean(self.forward_seconds)) if self.forward_seconds else 0.0

    @property
    def mean_backward_seconds(self) -> float:
        return float(np.mean(self.backward_seconds)) if self.backward_seconds else 0.0

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "mean_epoch_seconds": self.mean_epoch_seconds,
                "total_minutes": self.total_minutes,
                "mean_forward_seconds": self.mean_forward_seconds,
                "mean_backward_seconds": self.mean_backward_seconds}


@dataclass
class TrainResult:
    model: object
    losses: list
    runtime: RuntimeReport
    series: pd.DataFrame
    best_epoch: int

    def __iter__(self):
        return iter((self.model, self.losses, self.runtime))

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_row() for r in self.losses],
                            columns=["epoch", "train_loss", "task_loss", "sparse_loss", "val_loss", "val_mae"])


def mse_loss(pred, truth) -> float:
    pred, truth = nk.as_mat(pred), nk.as_mat(truth)
    if pred.shape != truth.shape:
        raise DimensionError("mse_loss prediction vs truth", pred.shape, truth.shape)
    diff = pred - truth
    return float(np.mean(diff * diff))


def mse_grad(pred, truth) -> np.ndarray:
    pred, truth = nk.as_mat(pred), nk.as_mat(truth)
    if pred.shape != truth.shape:
        raise DimensionError("mse_grad prediction vs truth", pred.shape, truth.shape)
    return 2.0 * (pred - truth) / pred.size


def l1_penalty(matrices, lam: float) -> float:
    """lam * sum |I_ij| over every given raw interaction matrix."""
    if lam < 0:
        raise UsageError(f"lambda_sparse must be >= 0, got {lam}")
    return float(lam * sum(np.abs(nk.as_mat(m)).sum() for m in matrices))


def l1_gradient(m, lam: float) -> np.ndarray:
    """Subgradient lam * sign(m); zero at exact zeros."""
    return lam * np.sign(nk.as_mat(m))


@dataclass
class AdamState:
    t: int
    m: dict
    v: dict

    @classmethod
    def like(cls, params: dict) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads, state: AdamState, config: OptimConfig) -> dict:
    """One Adam update in place, with L2 weight decay added to the gradient."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        if state.m[name].shape != p.shape:
            raise DimensionError(f"optimizer state for {name}", state.m[name].shape, p.shape)
        g = grads[name] + config.weight_decay * p
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        p -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params


def interaction_series(model, epoch: int, threshold: float = 1e-4) -> list[dict]:
    """(epoch, head, sparsity, frobenius) rows for the model's raw per-head matrices."""
    return [{"epoch": epoch, "head": k, "sparsity": sparsity_fraction(m, threshold),
             "frobenius": frobenius(m)}
            for k, m in enumerate(model.interaction_matrices("raw"))]


def _check_finite(what, values, epoch):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what} at epoch {epoch}")


def train(model, dataset, config: OptimConfig, seed: int = 0, on_step=None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation MAE; best weights are restored.

    ``on_step(epoch, model)`` runs after every optimizer update.
    """
    order_seq, forward_seq = np.random.SeedSequence(seed).spawn(2)
    order_rng = np.random.default_rng(order_seq)
    forward_rng = np.random.default_rng(forward_seq)
    policy = TeacherForcingPolicy(config.teacher_forcing, config.tf_p0, config.tf_decay)

    fit_x, fit_y = dataset.split("fit")
    if dataset.count("val"):
        val_x, val_y = dataset.split("val")
    else:
        logger.warning("No validation windows, early stopping watches the training windows")
        val_x, val_y = fit_x, fit_y
    if len(fit_x) == 0:
        raise DataError("no training windows")
    scale = dataset.norm.scale if dataset.norm is not None else 1.0
    l1_names = model.interaction_names()

    state = AdamState.like(model.params)
    runtime = RuntimeReport()
    losses, series = [], []
    best_mae, best_epoch, wait = np.inf, 0, 0
    best_params = {k: v.copy() for k, v in model.params.items()}

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = order_rng.permutation(len(fit_x))
        task_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y = fit_x[idx], fit_y[idx]

            t0 = time.perf_counter()
            preds, rec = model.forward(x, y, training=True, rng=forward_rng, epoch=epoch - 1, policy=policy)
            t1 = time.perf_counter()
            _check_finite("predictions", preds, epoch)
            task = scale * scale * mse_loss(preds, y)
            _check_finite("task loss", task, epoch)
            grads = nk.backward(rec, scale * scale * mse_grad(preds, y))
            runtime.forward_seconds.append(t1 - t0)
            runtime.backward_seconds.append(time.perf_counter() - t1)
            for name in l1_names:
                grads.add(name, l1_gradient(model.params[name], config.lambda_sparse))
            bad = grads.first_non_finite()
            if bad is not None:
                raise NumericError(f"non-finite gradient for {bad} at epoch {epoch}")
            adam_step(model.params, grads, state, config)
            if on_step is not None:
                on_step(epoch, model)
            task_sum += task * len(idx)

        sparse = l1_penalty([model.params[n] for n in l1_names], config.lambda_sparse)
        val_pred = model.predict(val_x)
        _check_finite("validation predictions", val_pred, epoch)
        report = LossReport(epoch, task_sum / len(fit_x), sparse,
                            scale * scale * mse_loss(val_pred, val_y),
                            scale * float(np.mean(np.abs(val_pred - val_y))))
        losses.append(report)
        series.extend(interaction_series(model, epoch, config.sparsity_threshold))
        runtime.epoch_seconds.append(time.perf_counter() - started)
        logger.info("epoch %d/%d loss=%.6f val_mae=%.6f", epoch, config.epochs, report.total, report.val_mae)

        if report.val_mae < best_mae:
            best_mae, best_epoch, wait = report.val_mae, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            wait += 1
            if wait >= config.patience:
                logger.info("Early stop at epoch %d, best epoch %d (val_mae=%.6f)", epoch, best_epoch, best_mae)
                break

    for name, value in best_params.items():
        np.copyto(model.params[name], value)
    frame = pd.DataFrame(series, columns=["epoch", "head", "sparsity", "frobenius"])
    return TrainResult(model, losses, runtime, frame, best_epoch)


def metric_report(pred, truth) -> MetricReport:
    """RMSE, MAE, Frobenius accuracy, R^2 and explained variance over all entries."""
    pred, truth = nk.as_mat(pred), nk.as_mat(truth)
    if pred.shape != truth.shape:
        raise DimensionError("metric prediction vs truth", pred.shape, truth.shape)
    y, y_hat = truth.ravel(), pred.ravel()
    denom = np.linalg.norm(y)
    accuracy = 1.0 - np.linalg.norm(y - y_hat) / denom if denom > 0 else float("nan")
    return MetricReport(
        rmse=float(np.sqrt(mean_squared_error(y, y_hat))),
        mae=float(mean_absolute_error(y, y_hat)),
        accuracy=float(accuracy),
        r2=float(r2_score(y, y_hat)),
        var=float(explained_variance_score(y, y_hat)),
    )


def evaluate(model, split, norm=None) -> MetricReport:
    """Metrics on de-normalized forecasts of ``split = (inputs, targets)``, with a per-step breakdown."""
    inputs, targets = split
    if len(inputs) == 0:
        raise DataError("empty test set")
    pred = model.predict(inputs)
    if norm is not None:
        pred, targets = norm.inverse(pred), norm.inverse(targets)
    report = metric_report(pred, targets)
    if pred.shape[1] > 1:
        report.per_step = [metric_report(pred[:, s], targets[:, s]) for s in range(pred.shape[1])]
    return report


@dataclass
class SeedRun:
    seed: int
    result: TrainResult
    metrics: MetricReport
    dataset: object


def run_experiment(run_config, graph, dataset, seed: int) -> SeedRun:
    from utils.model import build_model

    train_values = dataset.train_frames()
    model = build_model(run_config.model, graph, train_values, dataset.features,
                        dataset.horizon, seed)
    result = train(model, dataset, run_config.optimizer, seed)
    metrics = evaluate(model, dataset.split("test"), dataset.norm)
    logger.info("seed %d %s: mae=%.4f rmse=%.4f acc=%.4f", seed, run_config.model.variant,
                metrics.mae, metrics.rmse, metrics.accuracy)
    return SeedRun(seed, result, metrics, dataset)


def run_seeds(run_config, graph, dataset, seeds) -> tuple[pd.DataFrame, list[SeedRun]]:
    """Train and evaluate once per seed; one metrics row per seed."""
    runs = [run_experiment(run_config, graph, dataset, s) for s in seeds]
    rows = [{"seed": r.seed, "variant": run_config.model.variant, **r.metrics.to_dict(),
             "mean_epoch_seconds": r.result.runtime.mean_epoch_seconds} for r in runs]
    for row in rows:
        row.pop("per_step", None)
    return pd.DataFrame(rows), runs
