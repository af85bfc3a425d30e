"""Masked L1 loss, Adam, and the epoch loop with early stopping.

The loss is the global masked mean: per held-out position the absolute
error is averaged over features, then the sum over positions is divided
once by the number of held-out positions. Batches pool their positions
before normalizing, so every held-out entry carries the same weight no
matter how windows are grouped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import IncompleteWindow, Normalizer
from .errors import ContractError, EmptyMaskError, NumericError
from .evaluation import pooled_metrics
from .model import MagiNet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 8
    patience: int = 20
    seed: int = 1
    grad_clip: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.patience < 0:
            raise ContractError("patience must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


def masked_l1_loss(xhat: Tensor, xtilde, eval_mask) -> Tensor:
    """Mean absolute error over held-out positions (feature-averaged)."""
    xtilde = np.asarray(xtilde, dtype=np.float64)
    eval_mask = np.asarray(eval_mask, dtype=np.float64)
    count = int(eval_mask.sum())
    if count == 0:
        raise EmptyMaskError("no held-out positions in this batch")
    per_position = ad.absolute(xhat - ad.constant(xtilde)).mean(axis=2)
    return ad.masked_select(per_position, eval_mask).sum() * (1.0 / count)


class Adam:
    """Bias-corrected Adam over a named parameter dict; grads zero after step."""

    def __init__(self, params: dict, lr: float, clip: float | None = None):
        self.params = dict(params)
        self.lr = lr
        self.clip = clip
        self.step_count = 0
        self.moment1 = {name: np.zeros_like(t.data) for name, t in self.params.items()}
        self.moment2 = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self) -> None:
        grads = {}
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if np.isnan(g).any():
                raise NumericError(f"NaN gradient in parameter {name!r}")
            grads[name] = g
        if self.clip is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip:
                scale = self.clip / total
                grads = {name: g * scale for name, g in grads.items()}
        self.step_count += 1
        correct1 = 1.0 - ADAM_BETA1 ** self.step_count
        correct2 = 1.0 - ADAM_BETA2 ** self.step_count
        for name, t in self.params.items():
            g = grads[name]
            m = self.moment1[name]
            v = self.moment2[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            t.data = t.data - self.lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
            t.zero_grad()


@dataclass
class TrainResult:
    best_state: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = float("inf")
    best_val_mape: float = float("inf")
    diverged: bool = False
    epochs_run: int = 0


def evaluate_model(model: MagiNet, windows: list[IncompleteWindow]) -> tuple[float, float]:
    """Pooled RMSE/MAPE over held-out positions, in original units."""
    preds, truths, masks = [], [], []
    for w in windows:
        preds.append(model.predict(w))
        truths.append(w.ground_truth)
        masks.append(w.eval_mask)
    return pooled_metrics(preds, truths, masks)


def train_model(model: MagiNet, train_windows: list[IncompleteWindow],
                valid_windows: list[IncompleteWindow], cfg: TrainConfig) -> TrainResult:
    """Run the epoch loop; keeps the best-validation parameter state.

    Windows arrive in original units; the model's normalizer (fit on the
    training split) maps inputs and loss targets into normalized space,
    while validation metrics are computed in original units.
    """
    if not train_windows or not valid_windows:
        raise ContractError("training needs nonempty train and validation splits")
    if model.normalizer is None:
        model.normalizer = Normalizer.fit(train_windows)
    norm = model.normalizer
    train_norm = [norm.normalize_window(w) for w in train_windows]
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(dict(model.params.items()), lr=cfg.learning_rate, clip=cfg.grad_clip)
    result = TrainResult(best_state=model.params.state())
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_norm))
        epoch_abs_sum = 0.0
        epoch_count = 0
        diverged = False
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_norm[i] for i in order[start:start + cfg.batch_size]]
            counts = [w.held_out_count() for w in batch]
            total = sum(counts)
            if total == 0:
                continue  # nothing to supervise in this batch
            pieces = []
            for w in batch:
                if w.held_out_count() == 0:
                    continue
                out = model.forward(w.x, w.m)
                per_position = ad.absolute(out - ad.constant(w.ground_truth)).mean(axis=2)
                pieces.append(ad.masked_select(per_position, w.eval_mask).sum())
            batch_abs = pieces[0] if len(pieces) == 1 else sum(pieces[1:], pieces[0])
            loss = batch_abs * (1.0 / total)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                diverged = True
                break
            model.params.zero_grads()
            loss.backward()
            optimizer.step()
            epoch_abs_sum += loss_value * total
            epoch_count += total
        if diverged:
            result.diverged = True
            result.epochs_run = epoch
            break
        train_loss = epoch_abs_sum / max(1, epoch_count)
        val_rmse, val_mape = evaluate_model(model, valid_windows)
        result.history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_rmse": val_rmse,
            "val_mape": val_mape,
        })
        result.epochs_run = epoch
        if val_rmse < result.best_val_rmse:
            result.best_val_rmse = val_rmse
            result.best_val_mape = val_mape
            result.best_epoch = epoch
            result.best_state = model.params.state()
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    model.params.load_state(result.best_state)
    return result


def history_rows(result: TrainResult) -> list[list]:
    rows = [["epoch", "train_loss", "val_rmse", "val_mape"]]
    for entry in result.history:
        rows.append([entry["epoch"], repr(entry["train_loss"]),
                     repr(entry["val_rmse"]), repr(entry["val_mape"])])
    return rows
