"""Mini-batch Adam training with validation-AUC early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, make_batches
from .errors import NumericError
from .metrics import auc, logloss
from .nn.optim import adam_step


def batch_dropout_seed(seed: int, epoch: int, batch_index: int) -> int:
    """Dropout randomness is a pure function of (seed, epoch, batch)."""
    state = np.random.SeedSequence(
        [seed & (2**64 - 1), 2, epoch, batch_index]
    ).generate_state(1)
    return int(state[0])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    val_logloss: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_auc": self.val_auc,
            "val_logloss": self.val_logloss,
            "wall_time_s": self.wall_time_s,
        }


@dataclass
class TrainResult:
    best_epoch: int
    best_val_auc: float
    best_val_logloss: float
    epochs: list[EpochLog] = field(default_factory=list)


def train_model(
    model,
    train_ds: Dataset,
    val_ds: Dataset,
    learning_rate: float = 1e-3,
    batch_size: int = 256,
    max_epochs: int = 20,
    patience: int = 3,
    seed: int = 0,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train in place; the model ends up holding the best-val-AUC parameters."""
    result = TrainResult(best_epoch=-1, best_val_auc=-np.inf, best_val_logloss=np.inf)
    best_snapshot = None
    stale = 0
    for epoch in range(max_epochs):
        t0 = time.perf_counter()
        batches = make_batches(train_ds, batch_size, seed=seed, shuffle=True, epoch=epoch)
        loss_sum = 0.0
        for b_idx, batch in enumerate(batches):
            loss = model.loss_and_grads(
                batch, rng_seed=batch_dropout_seed(seed, epoch, b_idx)
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}"
                )
            if learning_rate != 0.0:  # lr 0 is an explicit no-op optimizer
                adam_step(model.store, learning_rate)
            loss_sum += loss * len(batch)
        train_loss = loss_sum / len(train_ds)

        val_scores = model.predict_scores(val_ds)
        val_auc = auc(val_scores, val_ds.labels)
        val_ll = logloss(val_scores, val_ds.labels)
        entry = EpochLog(
            epoch=epoch,
            train_loss=train_loss,
            val_auc=val_auc,
            val_logloss=val_ll,
            wall_time_s=time.perf_counter() - t0,
        )
        result.epochs.append(entry)
        if log_fn is not None:
            log_fn(entry.to_dict())

        if val_auc > result.best_val_auc:
            result.best_val_auc = val_auc
            result.best_val_logloss = val_ll
            result.best_epoch = epoch
            best_snapshot = model.store.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break

    if best_snapshot is not None:
        model.store.restore(best_snapshot)
    return result
