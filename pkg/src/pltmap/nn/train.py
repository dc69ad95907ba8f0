"""Mini-batch training of the U-Net on a DatasetSplit."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError, TrainingDiverged
from ..pltcore import PLTSignal, mae, match_upstrokes, mse
from . import layers as L
from .optim import AdamState, PlateauScheduler, adam_step
from .unet import backward, forward, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 8
    lr: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_floor: float = 1e-5
    w_mae: float = 1.0
    w_mse: float = 1.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        for name in ("lr", "lr_floor", "w_mae", "w_mse"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if not 0 < self.lr_factor < 1:
            problems.append("lr_factor must lie in (0, 1)")
        if self.lr_patience < 1:
            problems.append("lr_patience must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int | None = None
    final: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def stack_split(cases):
    x = np.stack([c.input.samples for c in cases]).astype(np.float32)
    y = np.stack([c.target.samples for c in cases]).astype(np.float32)
    return x, y


def dataset_loss(model, x, y, cfg, batch_size=16):
    if len(x) == 0:
        return float("nan")
    pred = predict(model, x, batch_size)
    value, _ = L.mae_mse_loss(pred.astype(np.float64), y.astype(np.float64), cfg.w_mae, cfg.w_mse)
    return value


def evaluate(model, cases, tolerance_ms=20.0):
    """MAE, MSE and pooled upstroke error rate over a list of cases."""
    if not cases:
        return {"n": 0, "mae": float("nan"), "mse": float("nan"), "upstroke_error_rate": float("nan")}
    x, y = stack_split(cases)
    pred = predict(model, x)
    report = None
    for case, p in zip(cases, pred):
        r = match_upstrokes(PLTSignal(p, case.target.sample_rate), case.target.break_indices,
                            tolerance_ms)
        report = r if report is None else report + r
    return {
        "n": len(cases),
        "mae": mae(pred, y),
        "mse": mse(pred, y),
        "upstroke_error_rate": report.error_rate,
        "true_upstrokes": report.true_count,
        "detected_upstrokes": report.detected_count,
        "matched_upstrokes": report.matched_count,
    }


def train(model, split, cfg=None, on_epoch=None):
    """Train a copy of ``model``; returns the best-validation model and report."""
    cfg = cfg or TrainConfig()
    report = TrainReport()
    if cfg.epochs == 0:
        return model, report
    if not split.train:
        raise ConfigError("training split is empty")
    model = model.copy()
    x_tr, y_tr = stack_split(split.train)
    x_va, y_va = stack_split(split.validation) if split.validation else (x_tr[:0], y_tr[:0])
    if x_tr.shape[1] % model.arch.reduction:
        raise ShapeError("window length incompatible with the network")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    sched = PlateauScheduler(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_floor)
    best = None
    n = len(x_tr)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = sched.lr
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb = x_tr[idx][:, None, :]
            yb = y_tr[idx][:, None, :]
            pred, caches = forward(model, xb, "train", rng)
            value, dpred = L.mae_mse_loss(pred, yb, cfg.w_mae, cfg.w_mse)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b)
            grads = backward(model, dpred, caches)
            grads.pop("input")
            adam_step(model.params, grads, state, lr)
            total += value * len(idx)
        train_loss = total / n
        val_loss = dataset_loss(model, x_va, y_va, cfg) if len(x_va) else train_loss
        monitor = val_loss
        if not math.isfinite(monitor):
            raise TrainingDiverged(epoch, -1)
        if best is None or monitor < best[0]:
            best = (monitor, epoch, model.copy())
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.lr.append(lr)
        sched.step(monitor)
        log.info("epoch %d  train %.5f  val %.5f  lr %.2e  (%.1fs)",
                 epoch, train_loss, val_loss, lr, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, lr)
    _, report.best_epoch, model = best
    report.final = {
        "train": evaluate(model, split.train),
        "validation": evaluate(model, split.validation),
    }
    return model, report
