"""Dice-loss training with Adam and a halve-on-plateau learning-rate schedule."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .dataset import MAX_SHIFT, Piece, Sample, make_sample, stack_samples
from .errors import ConfigError, DimensionError, TrainingError
from .model import ConditionedUNet, ModelConfig, build_model
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

DICE_SMOOTHING = 1.0


def dice_loss(p: Tensor, g, smoothing: float = DICE_SMOOTHING) -> Tensor:
    """Dice coefficient loss ``1 - (2*sum(p*g) + s) / (sum(p^2) + sum(g^2) + s)``.

    Inputs with a leading batch axis (ndim >= 2) are reduced per sample and
    the per-sample losses are averaged; 1-D inputs are one sample.
    """
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(f"dice_loss shapes differ: prediction {p.shape}, target {g.shape}")
    axes = None if p.ndim <= 1 else tuple(range(1, p.ndim))
    gt = Tensor(g)
    overlap = (p * gt).sum(axis=axes)
    denom = (p * p).sum(axis=axes) + (g * g).sum(axis=axes)
    per_sample = 1.0 - (overlap * 2.0 + smoothing) / (denom + smoothing)
    return per_sample.mean()


def binary_cross_entropy(p: np.ndarray, g: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)))


# -- optimiser ----------------------------------------------------------------


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
    decay_mask: Sequence[bool] | None = None,
) -> None:
    """One bias-corrected Adam update, in place.

    L2 weight decay is coupled: ``weight_decay * param`` is added to the
    gradient before the moment updates, for parameters whose ``decay_mask``
    entry is true. Parameters with a ``None`` gradient are left untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state must have equal length")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient encountered")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if weight_decay and (decay_mask is None or decay_mask[i]):
            g = g + weight_decay * p
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def decays(name: str) -> bool:
    """Weight decay applies to weights only, never to biases or batch-norm scale/shift."""
    return not name.endswith((".bias", ".scale", ".shift"))


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], lr: float, weight_decay: float = 0.0):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.weight_decay = weight_decay
        self.mask = [decays(n) for n in self.names]
        self.state = OptimizerState.for_params([p.data for p in self.params])

    def step(self) -> None:
        adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.weight_decay,
            self.mask,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- learning-rate schedule ---------------------------------------------------


@dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    stale_epochs: int = 0
    halvings: int = 0
    halted: bool = False


def plateau_step(
    state: PlateauState, val_loss: float, patience: int = 2, max_halvings: int = 5
) -> tuple[float, bool]:
    """Feed one epoch's validation loss; returns ``(lr, halt)``.

    After ``patience`` epochs without a new best the lr is halved. Once it has
    been halved ``max_halvings`` times, the next plateau raises the halt flag.
    """
    if val_loss < state.best:
        state.best = val_loss
        state.stale_epochs = 0
    else:
        state.stale_epochs += 1
        if state.stale_epochs >= patience:
            state.stale_epochs = 0
            if state.halvings < max_halvings:
                state.lr /= 2.0
                state.halvings += 1
            else:
                state.halted = True
    return state.lr, state.halted


def lr_on_plateau(
    history: Sequence[float], lr0: float = 1e-3, patience: int = 2, max_halvings: int = 5
) -> tuple[float, bool]:
    """Replay a validation-loss history through the schedule."""
    if not history:
        raise ValueError("history must be non-empty")
    state = PlateauState(lr0)
    for loss in history:
        plateau_step(state, loss, patience, max_halvings)
    return state.lr, state.halted


# -- training loop ------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-5
    batch_size: int = 32
    plateau_patience: int = 2
    max_halvings: int = 5
    augment_max_shift: int = MAX_SHIFT
    seed: int = 0
    max_epochs: int = 200
    excerpts_per_piece: int = 1
    val_stride: int = 1  # evaluate every n-th onset of each validation piece
    time_limit: float | None = None  # seconds; stop after the epoch that crosses it

    def __post_init__(self) -> None:
        for name in ("learning_rate", "batch_size", "plateau_patience", "max_halvings", "max_epochs",
                     "excerpts_per_piece", "val_stride"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.augment_max_shift < 0:
            raise ConfigError("weight_decay and augment_max_shift must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    model: ConditionedUNet | None = None


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def train_step(model: ConditionedUNet, optimizer: Adam, samples: Sequence[Sample]) -> float:
    pages, excerpts, masks = stack_samples(samples)
    optimizer.zero_grad()
    probs = model(pages, excerpts, training=True)
    loss = dice_loss(probs[:, 0], masks)
    backward(loss)
    optimizer.step()
    return loss.item()


def evaluate_loss(model: ConditionedUNet, samples: Sequence[Sample], batch_size: int) -> float:
    """Mean per-sample Dice loss in eval mode."""
    total = 0.0
    with no_grad():
        for chunk in _batches(samples, batch_size):
            pages, excerpts, masks = stack_samples(chunk)
            probs = model(pages, excerpts, training=False)
            total += dice_loss(probs[:, 0], masks).item() * len(chunk)
    return total / len(samples)


def validation_samples(pieces: Sequence[Piece], stride: int = 1) -> list[Sample]:
    return [make_sample(p, f) for p in pieces for f in p.onset_frames[::stride]]


def train(
    corpus: Sequence[Piece],
    model_config: ModelConfig,
    train_config: TrainConfig,
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on the corpus's train split, selecting by validation Dice loss."""
    train_pieces = [p for p in corpus if p.split == "train"]
    valid_pieces = [p for p in corpus if p.split == "valid"]
    if not train_pieces:
        raise ConfigError("corpus has no training pieces")
    if not valid_pieces:
        raise ConfigError("corpus has no validation pieces")

    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    model = build_model(model_config, cfg.seed)
    optimizer = Adam(list(model.named_parameters()), cfg.learning_rate, cfg.weight_decay)
    schedule = PlateauState(cfg.learning_rate)
    val_set = validation_samples(valid_pieces, cfg.val_stride)

    log = None
    if log_path is not None:
        log = open(log_path, "w", newline="")
        writer = csv.writer(log)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])

    history: list[dict] = []
    best: Checkpoint | None = None
    started = time.monotonic()
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            lr = optimizer.lr
            jobs = [(p, int(rng.integers(len(p.notes)))) for p in train_pieces for _ in range(cfg.excerpts_per_piece)]
            order = rng.permutation(len(jobs))
            shifts = rng.integers(-cfg.augment_max_shift, cfg.augment_max_shift + 1, size=(len(jobs), 2))
            samples = [
                make_sample(jobs[i][0], jobs[i][0].onset_frames[jobs[i][1]], int(dx), int(dy), cfg.augment_max_shift)
                for i, (dx, dy) in zip(order, shifts)
            ]
            total = 0.0
            for chunk in _batches(samples, cfg.batch_size):
                total += train_step(model, optimizer, chunk) * len(chunk)
            train_loss = total / len(samples)
            val_loss = evaluate_loss(model, val_set, cfg.batch_size)
            row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
            history.append(row)
            if log is not None:
                writer.writerow([epoch, repr(train_loss), repr(val_loss), repr(lr)])
                log.flush()
            logger.info("epoch %d train %.4f val %.4f lr %.2e", epoch, train_loss, val_loss, lr)
            if on_epoch is not None:
                on_epoch(row)
            if best is None or val_loss < best.val_loss:
                best = Checkpoint(
                    model_config=model_config,
                    params={k: v.copy() for k, v in model.state_dict().items()},
                    train_config=cfg.to_dict(),
                    epoch=epoch,
                    val_loss=val_loss,
                )
            optimizer.lr, halt = plateau_step(schedule, val_loss, cfg.plateau_patience, cfg.max_halvings)
            if halt:
                logger.info("learning rate halved %d times without improvement; stopping", schedule.halvings)
                break
            if cfg.time_limit is not None and time.monotonic() - started > cfg.time_limit:
                logger.info("time limit reached after epoch %d", epoch)
                break
    finally:
        if log is not None:
            log.close()

    best.history = history
    model.load_state_dict(best.params)
    return TrainResult(best, history, model)


def model_from_checkpoint(cp: Checkpoint) -> ConditionedUNet:
    model = build_model(cp.model_config)
    model.load_state_dict(cp.params)
    return model
