"""Training loop and evaluation for the window classifiers.

Adam at lr 0.001 decayed by 0.1 every 10 epochs, early stopping on validation
loss with patience 20, best-epoch weights restored.  Deterministic given the
seed: weight init, batch shuffling, and dropout all derive from it.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass

import torch

from ..config import ConfigError
from ..dataset import Scaler, SlidingWindow
from . import Verdict, decide
from .heuristic import confusion_metrics
from .models import (ModelConfig, build_model, predict_probability,
                     weighted_bce_with_logits, windows_to_tensors)

EVAL_BATCH = 256


@dataclass
class TrainConfig:
    lr: float = 0.001
    lr_decay: float = 0.1
    lr_step_epochs: int = 10
    patience: int = 20
    max_epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.patience <= 0:
            raise ConfigError("patience must be positive")
        if self.max_epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("max_epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def train(model_config: ModelConfig, train_config: TrainConfig,
          train_windows: list[SlidingWindow], val_windows: list[SlidingWindow],
          scaler: Scaler) -> tuple[torch.nn.Module, list[dict]]:
    """Train from scratch; returns the best-validation model and the history."""
    if not train_windows or not val_windows:
        raise ValueError("training and validation splits must be non-empty")
    torch.manual_seed(train_config.seed)
    model = build_model(model_config)
    x_train, y_train = windows_to_tensors(train_windows, scaler)
    x_val, y_val = windows_to_tensors(val_windows, scaler)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr)
    schedule = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=train_config.lr_step_epochs, gamma=train_config.lr_decay)
    generator = torch.Generator().manual_seed(train_config.seed)

    history: list[dict] = []
    best_val = math.inf
    best_state = None
    best_epoch = -1
    since_best = 0
    n = x_train.shape[0]
    for epoch in range(train_config.max_epochs):
        model.train()
        order = torch.randperm(n, generator=generator)
        epoch_loss = 0.0
        started = time.monotonic()
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            logits = model(x_train[idx])
            loss = weighted_bce_with_logits(logits, y_train[idx],
                                            model_config.w_fp, model_config.w_fn)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch} "
                                   f"(batch start {start}); aborting")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * idx.shape[0]
        train_loss = epoch_loss / n
        val_loss = _dataset_loss(model, x_val, y_val, model_config)
        history.append({
            "epoch": epoch,
            "lr": optimizer.param_groups[0]["lr"],
            "train_loss": train_loss,
            "val_loss": val_loss,
            "seconds": time.monotonic() - started,
            "batch_size": train_config.batch_size,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                break
        schedule.step()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    history.append({"best_epoch": best_epoch, "best_val_loss": best_val})
    return model, history


def _dataset_loss(model: torch.nn.Module, x: torch.Tensor, y: torch.Tensor,
                  config: ModelConfig) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, x.shape[0], EVAL_BATCH):
            xb, yb = x[start:start + EVAL_BATCH], y[start:start + EVAL_BATCH]
            loss = weighted_bce_with_logits(model(xb), yb,
                                            config.w_fp, config.w_fn)
            total += loss.item() * xb.shape[0]
    if not math.isfinite(total):
        raise RuntimeError("non-finite validation loss; aborting")
    return total / x.shape[0]


def predict_windows(model: torch.nn.Module, windows: list[SlidingWindow],
                    scaler: Scaler, threshold: float = 0.5) -> list[Verdict]:
    """One verdict per window, in order, at a fixed evaluation batch size."""
    x, _ = windows_to_tensors(windows, scaler)
    verdicts: list[Verdict] = []
    for start in range(0, x.shape[0], EVAL_BATCH):
        probs = predict_probability(model, x[start:start + EVAL_BATCH])
        for offset, prob in enumerate(probs.tolist()):
            window = windows[start + offset]
            verdicts.append(Verdict(prob, decide(prob, threshold),
                                    window.first_ts, window.last_ts))
    return verdicts


def evaluate(model: torch.nn.Module, windows: list[SlidingWindow], scaler: Scaler,
             threshold: float = 0.5) -> tuple[dict, list[Verdict]]:
    """Confusion metrics plus the per-window verdict log."""
    if not windows:
        raise ValueError("no windows to evaluate")
    verdicts = predict_windows(model, windows, scaler, threshold)
    tp = fp = tn = fn = 0
    for window, verdict in zip(windows, verdicts):
        if window.label == 1 and verdict.decision == 1:
            tp += 1
        elif window.label == 1:
            fn += 1
        elif verdict.decision == 1:
            fp += 1
        else:
            tn += 1
    return confusion_metrics(tp, fp, tn, fn), verdicts
