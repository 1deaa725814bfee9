"""Full-batch training with Adam, patience-based early stopping, and
best-state restoration.

The optimized loss is mean squared error on normalized targets over the
training rows. After every update an evaluation pass records train,
validation and test RMSE in MPa; the validation RMSE, in normalized target
units, drives early stopping: an epoch improves only if it beats the best
seen so far by at least min_delta, and training stops once `patience` epochs
pass without improvement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dataset import FeatureTable, SplitMasks
from .errors import (
    DivergedLoss,
    EmptyTrainSet,
    InvalidConfig,
    NonFiniteGradient,
    NonFiniteValue,
)
from .knn import KnnGraph
from .metrics import MetricsReport, compute_metrics
from .sage import SageModel, forward_graph_level, forward_node_level


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 2000
    patience: int = 30
    min_delta: float = 1e-4
    seed: int = 42

    def validate(self) -> None:
        if self.lr <= 0:
            raise InvalidConfig(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidConfig("Adam betas must be in [0, 1)")
        if self.max_epochs < 1:
            raise InvalidConfig("max_epochs must be at least 1")
        if self.patience < 1:
            raise InvalidConfig("patience must be at least 1")
        if self.min_delta < 0:
            raise InvalidConfig("min_delta must be nonnegative")


class AdamState:
    """First and second moment accumulators keyed by parameter name."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: list[tuple[str, ad.Tensor]], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update over named parameters, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for name, tensor in params:
        grad = tensor.grad
        if grad is None or not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.values)
            state.v[name] = np.zeros_like(tensor.values)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad**2
        m_hat = m / (1.0 - b1**state.t)
        v_hat = v / (1.0 - b2**state.t)
        tensor.values -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)


@dataclass
class TrainHistory:
    """Per-epoch RMSE rows plus the stopping record."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    stop_reason: str = ""
    best_val_loss: float = float("inf")

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "train_rmse_mpa", "val_rmse_mpa", "test_rmse_mpa"])
            for row in self.rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


_FORWARDS = {"node": forward_node_level, "graph": forward_graph_level}


def _forward_fn(task: str) -> Callable:
    try:
        return _FORWARDS[task]
    except KeyError:
        raise InvalidConfig(f"task must be 'node' or 'graph', got {task!r}") from None


def _masked_rmse_mpa(pred_mpa: np.ndarray, actual_mpa: np.ndarray, mask: np.ndarray) -> float:
    diff = pred_mpa[mask] - actual_mpa[mask]
    return float(np.sqrt(np.mean(diff**2)))


def train(
    model: SageModel,
    graph: KnnGraph,
    table: FeatureTable,
    masks: SplitMasks,
    config: TrainConfig = TrainConfig(),
    task: str = "node",
    val_loss_override: Callable[[int], float] | None = None,
) -> tuple[SageModel, TrainHistory]:
    """Train in place and return the model restored to its best epoch.

    `val_loss_override`, when given, replaces the measured validation loss
    for each epoch (argument: 1-based epoch number); it exists so stopping
    logic can be exercised on a fixed schedule.
    """
    config.validate()
    forward = _forward_fn(task)
    if masks.train.size == 0:
        raise EmptyTrainSet("no training rows")
    params = model.parameters()
    adam = AdamState()
    history = TrainHistory()
    best_snapshot = model.snapshot()
    target_norm = table.target
    actual_mpa = table.target_mpa
    for epoch in range(1, config.max_epochs + 1):
        try:
            with ad.Tape() as tape:
                pred = forward(model, graph, table.features, "train")
                loss = ad.mse_loss(pred, target_norm, masks.train)
            tape.backward(loss)
            adam_step(params, adam, config)
            pred_eval = forward(model, graph, table.features, "eval").values[:, 0]
        except NonFiniteValue as exc:
            raise DivergedLoss(f"training diverged at epoch {epoch}: {exc}") from exc
        val_diff = pred_eval[masks.val] - target_norm[masks.val]
        val_loss = float(np.sqrt(np.mean(val_diff**2)))
        if val_loss_override is not None:
            val_loss = float(val_loss_override(epoch))
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"validation loss became non-finite at epoch {epoch}")

        pred_mpa = table.normalizer.denormalize_target(pred_eval)
        history.rows.append(
            (
                epoch,
                _masked_rmse_mpa(pred_mpa, actual_mpa, masks.train),
                _masked_rmse_mpa(pred_mpa, actual_mpa, masks.val),
                _masked_rmse_mpa(pred_mpa, actual_mpa, masks.test),
            )
        )

        if history.best_val_loss - val_loss >= config.min_delta:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_snapshot = model.snapshot()
        if epoch - history.best_epoch >= config.patience:
            history.stop_epoch = epoch
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_epoch = config.max_epochs
        history.stop_reason = "max_epochs"
    model.restore(best_snapshot)
    return model, history


def predict(
    model: SageModel, graph: KnnGraph, table: FeatureTable, task: str = "node"
) -> np.ndarray:
    """Evaluation-mode predictions for every row, denormalized to MPa."""
    forward = _forward_fn(task)
    pred_norm = forward(model, graph, table.features, "eval").values[:, 0]
    return table.normalizer.denormalize_target(pred_norm)


def evaluate(
    model: SageModel,
    graph: KnnGraph,
    table: FeatureTable,
    mask: np.ndarray,
    task: str = "node",
) -> MetricsReport:
    """Metrics in MPa over the masked rows."""
    pred_mpa = predict(model, graph, table, task)
    return compute_metrics(pred_mpa[mask], table.target_mpa[mask])
