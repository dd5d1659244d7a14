"""Training: the combined overlap + cross-entropy loss, plateau learning-rate
reduction, early stopping, and the epoch loop.

The loss is an asymmetric overlap index summed per class over the whole
batch (C minus the summed index) plus the per-pixel mean cross-entropy; both
terms differentiate through the autodiff tape. Learning-rate reduction and
early stopping share one improvement rule: a validation loss counts as
better only when it undercuts the best seen by more than ``min_delta``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_pair
from .errors import ConfigError, EmptyDataset, NonFinite, ShapeMismatch
from .explore import TargetShape
from .nn import MomentumSGD, Network, Tensor, clamp_min, log as t_log, sgd_step
from .preprocess import PreparedSample, StagedSample, finalize_pair

logger = logging.getLogger(__name__)

CE_EPS = 1e-7


@dataclass
class TverskyParams:
    alpha: float = 0.5
    beta: float = 0.5
    smooth: float = 1e-6

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("tversky alpha and beta must be >= 0")
        if not 0 < self.smooth <= 1e-3:
            raise ConfigError("tversky smooth must be in (0, 1e-3]")


def _as_pair(probs, onehot) -> tuple[Tensor, Tensor]:
    p = probs if isinstance(probs, Tensor) else Tensor(probs)
    g = onehot if isinstance(onehot, Tensor) else Tensor(onehot)
    if p.data.shape != g.data.shape:
        raise ShapeMismatch(f"probs {p.data.shape} vs onehot {g.data.shape}")
    if p.data.ndim != 4:
        raise ShapeMismatch("losses expect [N, C, S, S] tensors")
    return p, g


def tversky_loss(probs, onehot, params: TverskyParams = TverskyParams()) -> Tensor:
    """Sum over classes of (C - overlap index); sums run over batch and pixels.

    Per class: (|p*g| + s) / (|p*g| + alpha |g*(1-p)| + beta |p*(1-g)| + s).
    alpha weights missed truth mass, beta weights false prediction mass;
    alpha = beta = 0.5 reduces to the Dice-style loss.
    """
    p, g = _as_pair(probs, onehot)
    params.validate()
    axes = (0, 2, 3)
    tp = (p * g).sum(axis=axes)
    fn = ((1.0 - p) * g).sum(axis=axes)
    fp = (p * (1.0 - g)).sum(axis=axes)
    index = (tp + params.smooth) / (tp + params.alpha * fn + params.beta * fp + params.smooth)
    n_classes = p.data.shape[1]
    return float(n_classes) - index.sum()


def crossentropy_loss(probs, onehot) -> Tensor:
    """Mean over batch and pixels of -sum_c g_c ln(max(p_c, eps))."""
    p, g = _as_pair(probs, onehot)
    n, _, h, w = p.data.shape
    total = (g * t_log(clamp_min(p, CE_EPS))).sum()
    return -total / float(n * h * w)


def combined_loss(probs, onehot, params: TverskyParams = TverskyParams()) -> Tensor:
    return tversky_loss(probs, onehot, params) + crossentropy_loss(probs, onehot)


# -- schedule state machines -------------------------------------------------


@dataclass
class ScheduleState:
    lr: float
    min_lr: float = 1e-5
    factor: float = 0.1
    patience: int = 10
    min_delta: float = 1e-4
    best: float = math.inf
    stagnant_epochs: int = 0


@dataclass
class StopState:
    patience: int = 30
    min_delta: float = 1e-4
    best: float = math.inf
    stagnant_epochs: int = 0
    stopped: bool = False


def plateau_step(state: ScheduleState, val_loss: float) -> ScheduleState:
    """Reduce lr by ``factor`` after ``patience`` epochs without significant
    improvement; the counter resets after a reduction and lr never drops
    below ``min_lr``."""
    if not math.isfinite(val_loss):
        raise NonFinite(f"validation loss is not finite: {val_loss}")
    if val_loss < state.best - state.min_delta:
        return replace(state, best=val_loss, stagnant_epochs=0)
    stagnant = state.stagnant_epochs + 1
    if stagnant >= state.patience:
        return replace(state, lr=max(state.lr * state.factor, state.min_lr), stagnant_epochs=0)
    return replace(state, stagnant_epochs=stagnant)


def early_stop_step(state: StopState, val_loss: float) -> StopState:
    if not math.isfinite(val_loss):
        raise NonFinite(f"validation loss is not finite: {val_loss}")
    if val_loss < state.best - state.min_delta:
        stagnant = 0
        best = val_loss
    else:
        stagnant = state.stagnant_epochs + 1
        best = state.best
    return StopState(
        patience=state.patience,
        min_delta=state.min_delta,
        best=best,
        stagnant_epochs=stagnant,
        stopped=stagnant >= state.patience,
    )


# -- the epoch loop -----------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_seconds: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = 0
    skipped_steps: int = 0


@dataclass
class TrainConfig:
    lr: float = 0.001
    factor: float = 0.1
    min_lr: float = 1e-5
    min_delta: float = 1e-4
    plateau_patience: int = 10
    stop_patience: int = 30
    batch_size: int = 8
    max_epochs: int = 1000
    momentum: float = 0.9
    seed: int = 0
    tversky: TverskyParams = field(default_factory=TverskyParams)
    augment: AugmentConfig | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 0 < self.lr:
            raise ConfigError("lr must be positive")
        self.tversky.validate()
        if self.augment is not None:
            self.augment.validate()


def _to_batch(samples: list[PreparedSample]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s.pixels.transpose(2, 0, 1) for s in samples])
    ys = np.stack([s.onehot.transpose(2, 0, 1).astype(np.float64) for s in samples])
    return xs, ys


def _batched_loss(net: Network, prepared: list[PreparedSample], cfg: TrainConfig) -> float:
    """Combined loss over a sample list, averaged batch-wise by sample count."""
    total, count = 0.0, 0
    for start in range(0, len(prepared), cfg.batch_size):
        chunk = prepared[start : start + cfg.batch_size]
        xs, ys = _to_batch(chunk)
        probs = net.forward(Tensor(xs))
        loss = combined_loss(probs, Tensor(ys), cfg.tversky)
        total += float(loss.data) * len(chunk)
        count += len(chunk)
    return total / count


def fit(
    net: Network,
    train_samples: list[StagedSample],
    val_samples: list[StagedSample],
    config: TrainConfig,
    target: TargetShape,
) -> tuple[Network, TrainLog]:
    """Train until early stopping or the epoch cap; returns the best-validation
    network (ties keep the earlier epoch) and the full per-epoch log.

    Each epoch shuffles the training set with a per-epoch seeded PRNG,
    assembles batches (augmenting when configured, with a deterministic draw
    index per sample visit), and steps the optimizer. Steps with non-finite
    gradients are skipped and counted, never applied.
    """
    config.validate()
    if not train_samples or not val_samples:
        raise EmptyDataset("fit needs non-empty train and val sets")

    val_prepared = [
        finalize_pair(s.image01, s.classmap, target, s.sample_id) for s in val_samples
    ]
    augment_cfg = config.augment if config.augment and config.augment.enabled() else None

    optimizer = MomentumSGD(config.momentum) if config.momentum > 0 else None
    sched = ScheduleState(
        lr=config.lr,
        min_lr=config.min_lr,
        factor=config.factor,
        patience=config.plateau_patience,
        min_delta=config.min_delta,
    )
    stop = StopState(patience=config.stop_patience, min_delta=config.min_delta)
    log = TrainLog()
    best_val = math.inf
    best_params = {k: p.data.copy() for k, p in net.parameters.items()}
    n = len(train_samples)

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        lr = sched.lr
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        epoch_total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            prepared = []
            for offset, idx in enumerate(batch_ids):
                s = train_samples[int(idx)]
                img, cmap = s.image01, s.classmap
                if augment_cfg is not None:
                    draw = (epoch - 1) * n + start + offset
                    img, cmap = augment_pair(img, cmap, augment_cfg, draw)
                prepared.append(finalize_pair(img, cmap, target, s.sample_id))
            xs, ys = _to_batch(prepared)
            net.zero_grads()
            probs = net.forward(Tensor(xs))
            loss = combined_loss(probs, Tensor(ys), config.tversky)
            loss.backward()
            grads = net.gradients()
            if all(np.isfinite(g).all() for g in grads.values()):
                if optimizer is not None:
                    optimizer.step(net, grads, lr)
                else:
                    sgd_step(net, grads, lr)
            else:
                log.skipped_steps += 1
                logger.warning("epoch %d: skipped a step with non-finite gradients", epoch)
            epoch_total += float(loss.data) * len(batch_ids)
            seen += len(batch_ids)
        train_loss = epoch_total / seen
        val_loss = _batched_loss(net, val_prepared, config)
        log.rows.append(
            EpochRow(epoch, train_loss, val_loss, lr, time.perf_counter() - t0)
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: p.data.copy() for k, p in net.parameters.items()}
            log.best_epoch = epoch
        sched = plateau_step(sched, val_loss)
        stop = early_stop_step(stop, val_loss)
        if stop.stopped:
            break

    best_net = Network(net.config, {k: Tensor(v) for k, v in best_params.items()})
    return best_net, log


def save_train_log(log: TrainLog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr", "wall_seconds"])
        for row in log.rows:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.train_loss:.10g}",
                    f"{row.val_loss:.10g}",
                    f"{row.lr:.10g}",
                    f"{row.wall_seconds:.3f}",
                ]
            )
