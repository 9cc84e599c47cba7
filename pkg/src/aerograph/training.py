"""Full-batch ensemble training with MASE loss and plateau learning-rate decay.

Every training window contributes to one batch per epoch (B = 1). The loss is
the sum of absolute errors over all (window, region) pairs divided by the sum
of the targets. After each epoch the validation loss is evaluated; if it has
not improved for `lr_decay_patience` consecutive epochs the learning rate is
halved and the wait counter restarts. The returned model carries the
parameters from the epoch with the lowest validation loss (earliest epoch on
ties).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .dataio import DatasetSplit, WindowSample, window_targets
from .model import (
    DcsageModel,
    ModelConfig,
    forward_batch,
    initialize,
    predict_batch,
    save_checkpoint,
)
from .numerics import GradientTape, Tensor, adam_step, backward


class TrainingError(Exception):
    """Training could not proceed (bad data, diverging numerics)."""


class EnsembleError(TrainingError):
    """One ensemble member failed; the message names its seed."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-2
    lr_decay_patience: int = 40
    lr_decay_factor: float = 0.5
    seed: int = 0
    ensemble_size: int = 100
    hidden_dim: int = 16

    def validate(self) -> None:
        if self.epochs < 1:
            raise TrainingError("epochs must be at least 1")
        if not self.lr > 0:
            raise TrainingError("lr must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise TrainingError("lr_decay_factor must lie strictly between 0 and 1")
        if self.lr_decay_patience < 1:
            raise TrainingError("lr_decay_patience must be at least 1")
        if self.ensemble_size < 1:
            raise TrainingError("ensemble_size must be at least 1")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "lr_decay_patience": self.lr_decay_patience,
            "lr_decay_factor": self.lr_decay_factor,
            "seed": self.seed,
            "ensemble_size": self.ensemble_size,
            "hidden_dim": self.hidden_dim,
        }

    @staticmethod
    def from_json(data: dict) -> "TrainConfig":
        return TrainConfig(**data)


@dataclass
class TrainReport:
    """Loss curves and gradient-flow diagnostics for one training run."""

    seed: int
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    grad_flow: list[dict[str, float]] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    selected_epoch: int = 0  # 1-based
    best_val_loss: float = float("inf")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "grad_flow": self.grad_flow,
            "lr_history": self.lr_history,
            "selected_epoch": self.selected_epoch,
            "best_val_loss": self.best_val_loss,
        }

    @staticmethod
    def from_json(data: dict) -> "TrainReport":
        return TrainReport(**data)


def mase_loss(predictions, targets) -> Tensor:
    """Sum of absolute errors over all (window, region) pairs divided by the
    sum of the targets, as one full batch."""
    pred = predictions if isinstance(predictions, Tensor) else Tensor(predictions)
    targ = targets if isinstance(targets, Tensor) else Tensor(targets)
    if pred.shape != targ.shape:
        raise TrainingError(
            f"prediction shape {pred.shape} does not match targets {targ.shape}"
        )
    denom = float(targ.values.sum())
    if denom <= 0.0:
        raise TrainingError("MASE is undefined: target sum is not positive")
    return nx.sum_all(nx.absolute(pred - targ)) * (1.0 / denom)


def mase_value(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Plain-array MASE for evaluation passes that need no gradients."""
    denom = float(targets.sum())
    if denom <= 0.0:
        raise TrainingError("MASE is undefined: target sum is not positive")
    return float(np.abs(predictions - targets).sum() / denom)


def layer_of(param_name: str) -> str:
    return param_name.split(".", 1)[0]


def _grad_flow_by_layer(grads_by_name: dict[str, Tensor]) -> dict[str, float]:
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for name, g in grads_by_name.items():
        layer = layer_of(name)
        sums[layer] = sums.get(layer, 0.0) + float(np.abs(g.values).sum())
        counts[layer] = counts.get(layer, 0) + g.values.size
    return {layer: sums[layer] / counts[layer] for layer in sums}


def _model_config_for(config: TrainConfig, windows) -> ModelConfig:
    first = windows[0]
    return ModelConfig(
        num_regions=first.days[0].cases.shape[0],
        input_days=len(first.days),
        hidden_dim=config.hidden_dim,
    )


def train_one(
    split: DatasetSplit, config: TrainConfig, seed: int | None = None
) -> tuple[DcsageModel, TrainReport]:
    """Train a single model; returns the best-validation model and a report."""
    config.validate()
    if not split.train or not split.val:
        raise TrainingError("training needs non-empty train and validation splits")
    seed = config.seed if seed is None else seed

    model = initialize(_model_config_for(config, split.train), seed)
    train_days = [w.days for w in split.train]
    val_days = [w.days for w in split.val]
    train_targets = Tensor(window_targets(split.train))
    val_targets = window_targets(split.val)

    state = nx.AdamState(lr=config.lr)
    report = TrainReport(seed=seed)
    best_params = model.params
    best_val = float("inf")
    best_epoch = 0
    wait = 0

    for epoch in range(1, config.epochs + 1):
        try:
            tape = GradientTape()
            with tape:
                tape.watch(*model.params.values())
                preds = forward_batch(model, train_days)
                loss = mase_loss(preds, train_targets)
            grads = backward(loss, tape)
            grads_by_name = {name: grads[t] for name, t in model.params.items()}
            new_params = adam_step(model.params, grads_by_name, state)
        except nx.NumericsError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc

        report.train_losses.append(loss.item())
        report.grad_flow.append(_grad_flow_by_layer(grads_by_name))
        report.lr_history.append(state.lr)

        model = model.with_params(new_params)
        try:
            val_loss = mase_value(predict_batch(model, val_days), val_targets)
        except nx.NumericsError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        report.val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_params = model.params
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.lr_decay_patience:
                state.lr *= config.lr_decay_factor
                wait = 0

    report.selected_epoch = best_epoch
    report.best_val_loss = best_val
    return model.with_params(best_params), report


def checkpoint_metadata(config: TrainConfig, report: TrainReport) -> dict:
    return {
        "seed": report.seed,
        "selected_epoch": report.selected_epoch,
        "best_val_loss": report.best_val_loss,
        "train_config": config.to_json(),
    }


def member_paths(out_dir: str, index: int) -> tuple[str, str]:
    return (
        os.path.join(out_dir, f"model_{index:03d}.ckpt"),
        os.path.join(out_dir, f"report_{index:03d}.json"),
    )


def train_ensemble(
    split: DatasetSplit,
    config: TrainConfig,
    out_dir: str | None = None,
    on_member=None,
) -> list[tuple[DcsageModel, TrainReport]]:
    """Train `ensemble_size` members with seeds seed, seed+1, ...

    When `out_dir` is given, each member's checkpoint and report are written
    there as model_XXX.ckpt / report_XXX.json. `on_member` (if given) is
    called with (index, report) after each member finishes.
    """
    config.validate()
    results: list[tuple[DcsageModel, TrainReport]] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for i in range(config.ensemble_size):
        seed = config.seed + i
        try:
            model, report = train_one(split, config, seed=seed)
        except TrainingError as exc:
            raise EnsembleError(f"ensemble member with seed {seed} failed: {exc}") from exc
        if out_dir is not None:
            ckpt_path, report_path = member_paths(out_dir, i)
            save_checkpoint(ckpt_path, model, metadata=checkpoint_metadata(config, report))
            tmp = report_path + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(report.to_json(), fh, indent=1)
            os.replace(tmp, report_path)
        results.append((model, report))
        if on_member is not None:
            on_member(i, report)
    return results


def ensemble_predictions(
    models: list[DcsageModel], windows: list[WindowSample] | tuple[WindowSample, ...]
) -> np.ndarray:
    """One-step predictions stacked as (models, windows, regions)."""
    day_lists = [w.days for w in windows]
    return np.stack([predict_batch(m, day_lists) for m in models])
