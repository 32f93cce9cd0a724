"""RMSprop updates and the reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from ..config import TrainConfig
from .model import DecoderNetwork

logger = logging.getLogger(__name__)


def rmsprop_step(
    network: DecoderNetwork,
    grads: dict[str, np.ndarray],
    cfg: TrainConfig,
    lr: float | None = None,
) -> DecoderNetwork:
    """In-place RMSprop update of every parameter named in ``grads``.

    ``acc <- decay * acc + (1 - decay) * g**2`` then ``W <- W - lr * g / sqrt(acc + eps)``.
    ``lr`` defaults to ``cfg.lr``.
    """
    lr = cfg.lr if lr is None else lr
    params = network.parameters()
    for name, g in grads.items():
        acc = network.accumulators[name]
        acc *= cfg.rmsprop_decay
        acc += (1.0 - cfg.rmsprop_decay) * g * g
        params[name] -= lr * g / np.sqrt(acc + cfg.rmsprop_eps)
    return network


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a new minimum.

    Improvement is strict: a validation loss equal to the best so far counts as a
    stalled epoch. The wait counter restarts after every reduction.
    """

    lr: float
    patience: int
    factor: float
    best: float = float("inf")
    wait: int = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> PlateauSchedule:
        return cls(cfg.lr, cfg.plateau_patience, cfg.plateau_factor)

    def update(self, val_loss: float) -> float:
        """Record one epoch and return the learning rate for the next."""
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience:
            self.lr *= self.factor
            self.wait = 0
            logger.info("Validation loss plateaued at %.4g; learning rate now %.3g", self.best, self.lr)
        return self.lr


def plateau_lr(history: Iterable[float], cfg: TrainConfig) -> float:
    """Learning rate in effect after replaying a validation-loss history."""
    history = list(history)
    if not history:
        raise ValueError("plateau_lr needs at least one validation loss")
    schedule = PlateauSchedule.from_config(cfg)
    for loss in history:
        schedule.update(loss)
    return schedule.lr
