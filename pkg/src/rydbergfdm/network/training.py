"""Mini-batch training, cross-validation and prediction."""

from __future__ import annotations

import csv
import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .. import seeding
from ..codec import Frame, decode_label
from ..config import NetworkArchitecture, TrainConfig
from ..dataset import Record, Split, records_to_arrays
from ..errors import ShapeError, TrainingError
from ..parallel import parallel_map
from ..physics import Spectrum
from .layers import minmax_scale, mse_loss
from .model import DecoderNetwork, loss_and_gradients
from .optim import PlateauSchedule, rmsprop_step

logger = logging.getLogger(__name__)


@dataclass
class LossCurves:
    epoch: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def append(self, epoch: int, train_mse: float, val_mse: float, lr: float):
        self.epoch.append(epoch)
        self.train_mse.append(train_mse)
        self.val_mse.append(val_mse)
        self.lr.append(lr)

    def to_csv(self, path: str | os.PathLike[str], run_id: str | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            if run_id:
                handle.write(f"# run_id: {run_id}\n")
            writer = csv.writer(handle)
            writer.writerow(["epoch", "train_mse", "val_mse", "lr"])
            for row in zip(self.epoch, self.train_mse, self.val_mse, self.lr):
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return path


@dataclass
class TrainedModel:
    network: DecoderNetwork
    curves: LossCurves
    fold: int = 0

    @property
    def best_val_mse(self) -> float:
        return min(self.curves.val_mse)


def _batches(n: int, batch_size: int) -> list[slice]:
    """Contiguous batch slices; a trailing batch of one is merged into its predecessor."""
    starts = list(range(0, n, batch_size))
    bounds = [*starts, n]
    if len(starts) > 1 and n - starts[-1] == 1:
        bounds.pop(-2)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def evaluate_mse(network: DecoderNetwork, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Inference-mode MSE over a whole set."""
    total = 0.0
    for sl in _batches(len(x), batch_size):
        total += mse_loss(network.predict_proba(x[sl]), y[sl]) * (sl.stop - sl.start)
    return total / len(x)


def fit_model(
    train: Sequence[Record],
    val: Sequence[Record],
    cfg: TrainConfig,
    arch: NetworkArchitecture | None = None,
    fold: int = 0,
) -> TrainedModel:
    """Train a fresh decoder with RMSprop and a reduce-on-plateau schedule.

    Every epoch shuffles the training set and adds fresh Gaussian noise of
    ``cfg.augment_sigma`` to its inputs. Random streams are keyed by ``cfg.seed`` and
    ``fold`` so folds trained in parallel match folds trained serially.
    """
    if not train or not val:
        raise TrainingError(f"Empty dataset (train={len(train)}, val={len(val)})")
    if len(train) < 2:
        raise TrainingError("Training needs at least 2 records for batch normalisation")
    arch = arch or NetworkArchitecture()
    x_train, y_train = records_to_arrays(list(train))
    x_val, y_val = records_to_arrays(list(val))
    if x_train.shape[1] != x_val.shape[1] or y_train.shape[1] != y_val.shape[1]:
        raise ShapeError("Training and validation records differ in shape")
    x_train, x_val = minmax_scale(x_train), minmax_scale(x_val)

    network = DecoderNetwork.initialize(
        arch, x_train.shape[1], y_train.shape[1], seeding.stream(cfg.seed, "init", fold)
    )
    schedule = PlateauSchedule.from_config(cfg)
    curves = LossCurves()
    logger.info(
        "Fold %d: training %d parameters on %d records (%d validation)",
        fold,
        network.parameter_count(),
        len(x_train),
        len(x_val),
    )

    for epoch in range(1, cfg.epochs + 1):
        lr = schedule.lr
        rng = seeding.stream(cfg.seed, "epoch", fold, epoch)
        order = rng.permutation(len(x_train))
        inputs = x_train[order]
        if cfg.augment_sigma > 0:
            inputs = inputs + rng.normal(0.0, cfg.augment_sigma, size=inputs.shape)
        targets = y_train[order]

        weighted = 0.0
        for sl in _batches(len(inputs), cfg.batch_size):
            loss, grads = loss_and_gradients(network, inputs[sl], targets[sl])
            rmsprop_step(network, grads, cfg, lr=lr)
            weighted += loss * (sl.stop - sl.start)
        train_mse = weighted / len(inputs)
        if not np.isfinite(train_mse):
            raise TrainingError(f"Training diverged at epoch {epoch} (loss {train_mse})")
        val_mse = evaluate_mse(network, x_val, y_val)
        curves.append(epoch, train_mse, val_mse, lr)
        schedule.update(val_mse)
        logger.info(
            "Fold %d epoch %d/%d: train %.5f val %.5f lr %.2e",
            fold,
            epoch,
            cfg.epochs,
            train_mse,
            val_mse,
            lr,
        )
    return TrainedModel(network, curves, fold)


def _train_fold(k: int, folds: Split, cfg: TrainConfig, arch: NetworkArchitecture) -> TrainedModel:
    train, val = folds.train_val(k)
    return fit_model(train, val, cfg, arch, fold=k)


@dataclass
class CrossValidation:
    models: list[TrainedModel]

    @property
    def best_index(self) -> int:
        """Fold with the lowest validation MSE; ties go to the lowest fold."""
        return int(np.argmin([m.best_val_mse for m in self.models]))

    @property
    def best(self) -> TrainedModel:
        return self.models[self.best_index]


def cross_validate(
    folds: Split,
    cfg: TrainConfig,
    arch: NetworkArchitecture | None = None,
    jobs: int = 1,
) -> CrossValidation:
    """Train one model per fold, each validated on its held-out fold."""
    arch = arch or NetworkArchitecture()
    models = parallel_map(
        partial(_train_fold, folds=folds, cfg=cfg, arch=arch),
        range(len(folds.folds)),
        jobs=jobs,
    )
    result = CrossValidation(models)
    logger.info(
        "Cross-validation: best fold %d (val MSE %.5f)",
        result.best_index,
        result.best.best_val_mse,
    )
    return result


def _spectra_matrix(network: DecoderNetwork, spectra: Sequence[Spectrum]) -> np.ndarray:
    lengths = {len(s) for s in spectra}
    if lengths != {network.input_len}:
        raise ShapeError(
            f"Network expects spectra of length {network.input_len}, got lengths {sorted(lengths)}"
        )
    return minmax_scale(np.stack([s.samples for s in spectra]))


def predict_bits(network: DecoderNetwork, spectrum: Spectrum, threshold: float = 0.5) -> Frame:
    """Decode one spectrum: scale, inference-mode forward, threshold."""
    x = _spectra_matrix(network, [spectrum])
    return decode_label(network.predict_proba(x)[0], threshold)


def predict_frames(
    network: DecoderNetwork,
    spectra: Sequence[Spectrum],
    threshold: float = 0.5,
    batch_size: int = 256,
) -> list[Frame]:
    """Batched ``predict_bits``."""
    if not spectra:
        return []
    x = _spectra_matrix(network, spectra)
    frames = []
    for sl in _batches(len(x), batch_size):
        frames.extend(decode_label(row, threshold) for row in network.predict_proba(x[sl]))
    return frames
