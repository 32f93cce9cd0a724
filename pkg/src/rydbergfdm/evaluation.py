"""Accuracy, confusion matrices, noise sweeps, timing and the payload demo."""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import statistics
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
import psutil

from . import seeding
from .codec import (
    Frame,
    bits_to_frames,
    encode_bits,
    field_from_label,
    frames_to_bits,
    payload_to_frames,
)
from .config import FitConfig, RunConfig
from .dataset import Record, add_white_noise, generate_dataset, noised_copy, split
from .errors import ConfigError, FramingError, ShapeError
from .fitting import fit_many, fit_phases, transmission_curve_for
from .network.layers import minmax_scale
from .network.model import DecoderNetwork
from .network.training import fit_model, predict_bits, predict_frames
from .parallel import parallel_map
from .physics import Spectrum, simulate_spectrum

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Accuracy and confusion


def exact_match_accuracy(preds: Sequence[Frame], truths: Sequence[Frame]) -> float:
    """Fraction of frames predicted exactly."""
    if len(preds) != len(truths):
        raise ShapeError(f"{len(preds)} predictions for {len(truths)} ground truths")
    if not truths:
        raise ShapeError("Accuracy of an empty set is undefined")
    return sum(p == t for p, t in zip(preds, truths)) / len(truths)


@dataclass
class ConfusionMatrix:
    """Rows are ground-truth classes, columns predictions.

    ``rejected[k]`` counts truths of class ``k`` whose prediction fell outside the class
    space; it is only nonzero when built with ``strict=False``.
    """

    counts: np.ndarray
    rejected: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.rejected.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.rejected

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def to_csv(self, path: str | os.PathLike[str], run_id: str | None = None) -> Path:
        bits = max(1, int(np.log2(self.n_classes)))
        names = [format(k, f"0{bits}b") for k in range(self.n_classes)]
        rows = [[names[k], *map(int, self.counts[k]), int(self.rejected[k])] for k in range(self.n_classes)]
        return write_table(path, ["truth", *names, "rejected"], rows, run_id)


def _class_of(frame: Frame, class_bits: int) -> int | None:
    if any(frame.bits[class_bits:]):
        return None
    return frame.class_index(class_bits)


def confusion(
    preds: Sequence[Frame],
    truths: Sequence[Frame],
    class_bits: int | None = None,
    strict: bool = True,
) -> ConfusionMatrix:
    """Count (truth, prediction) class pairs over ``2**class_bits`` classes.

    A class is the integer value of the leading ``class_bits`` bits; remaining bits
    must be zero. Truths outside the class space always raise; predictions outside
    it raise when ``strict`` and are tallied in ``rejected`` otherwise.
    """
    if len(preds) != len(truths):
        raise ShapeError(f"{len(preds)} predictions for {len(truths)} ground truths")
    if not truths:
        raise ShapeError("Confusion of an empty set is undefined")
    class_bits = len(truths[0]) if class_bits is None else class_bits
    k = 2**class_bits
    counts = np.zeros((k, k), dtype=np.int64)
    rejected = np.zeros(k, dtype=np.int64)
    for pred, truth in zip(preds, truths):
        row = _class_of(truth, class_bits)
        if row is None or len(truth) != len(pred):
            raise ShapeError(f"Ground truth {truth} is outside the {k}-class space")
        col = _class_of(pred, class_bits)
        if col is None:
            if strict:
                raise ShapeError(f"Prediction {pred} is outside the {k}-class space")
            rejected[row] += 1
            continue
        counts[row, col] += 1
    return ConfusionMatrix(counts, rejected)


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    values = list(values)
    mean = statistics.fmean(values)
    stderr = statistics.stdev(values) / np.sqrt(len(values)) if len(values) > 1 else 0.0
    return mean, float(stderr)


def evaluate_network(
    network: DecoderNetwork, records: Sequence[Record], threshold: float = 0.5, class_bits: int | None = None
) -> tuple[float, ConfusionMatrix]:
    preds = predict_frames(network, [r.spectrum for r in records], threshold)
    truths = [r.label.frame for r in records]
    return exact_match_accuracy(preds, truths), confusion(preds, truths, class_bits, strict=False)


# ---------------------------------------------------------------------------
# Noise sweeps


@dataclass
class NoiseGrid:
    """Mean accuracy (and standard error) per (train sigma, test sigma) cell."""

    train_sigmas: tuple[float, ...]
    test_sigmas: tuple[float, ...]
    accuracy: np.ndarray
    stderr: np.ndarray

    def to_csv(self, path: str | os.PathLike[str], run_id: str | None = None) -> Path:
        rows = [
            [f"{tr:g}", f"{te:g}", f"{self.accuracy[i, j]:.6f}", f"{self.stderr[i, j]:.6f}"]
            for i, tr in enumerate(self.train_sigmas)
            for j, te in enumerate(self.test_sigmas)
        ]
        return write_table(path, ["train_sigma", "test_sigma", "accuracy", "stderr"], rows, run_id)


def _clean_test_records(config: RunConfig) -> list[Record]:
    """Noiseless spectra, ``test_fraction`` of the per-class count for every class."""
    per_class = max(1, round(config.dataset.n_samples_per_class * config.split.test_fraction))
    spec = config.dataset_spec().model_copy(update={"noise_sigma": 0.0, "n_samples_per_class": per_class})
    return generate_dataset(spec)


def train_for_sigma(sigma: float, config: RunConfig) -> DecoderNetwork:
    """Train on fold 0 of a dataset generated at noise ``sigma``."""
    spec = config.dataset_spec().model_copy(update={"noise_sigma": sigma})
    folds = split(generate_dataset(spec), config.split, config.seed)
    train, val = folds.train_val(0)
    return fit_model(train, val, config.train, config.network).network


def _grid_row(
    train_sigma: float, test_sigmas: Sequence[float], clean: list[Record], config: RunConfig, repeats: int
) -> list[tuple[float, float]]:
    network = train_for_sigma(train_sigma, config)
    row = []
    for test_sigma in test_sigmas:
        accs = [
            evaluate_network(
                network, noised_copy(clean, test_sigma, config.seed, rep), config.codec.threshold, config.codec.class_bits
            )[0]
            for rep in range(repeats)
        ]
        row.append(_mean_stderr(accs))
        logger.info("Noise grid train %.3g test %.3g: accuracy %.4f", train_sigma, test_sigma, row[-1][0])
    return row


def noise_grid(
    train_sigmas: Sequence[float],
    test_sigmas: Sequence[float],
    config: RunConfig,
    jobs: int = 1,
) -> NoiseGrid:
    """Accuracy of networks trained at each train sigma on test sets at each test sigma.

    Every cell averages ``config.eval.repeats`` fresh test-noise draws over the same
    noiseless test spectra. Rows are trained in parallel.
    """
    train_sigmas, test_sigmas = tuple(train_sigmas), tuple(test_sigmas)
    if not train_sigmas or not test_sigmas:
        raise ValueError("Noise grid axes must be nonempty")
    clean = _clean_test_records(config)
    rows = parallel_map(
        partial(_grid_row, test_sigmas=test_sigmas, clean=clean, config=config, repeats=config.eval.repeats),
        train_sigmas,
        jobs=jobs,
    )
    accuracy = np.array([[cell[0] for cell in row] for row in rows])
    stderr = np.array([[cell[1] for cell in row] for row in rows])
    return NoiseGrid(train_sigmas, test_sigmas, accuracy, stderr)


@dataclass
class CurvePoint:
    sigma: float
    acc_dl: float
    acc_fit: float
    stderr_dl: float
    stderr_fit: float


@dataclass
class DlFitCurve:
    points: list[CurvePoint]

    def to_csv(self, path: str | os.PathLike[str], run_id: str | None = None) -> Path:
        rows = [
            [f"{p.sigma:g}", f"{p.acc_dl:.6f}", f"{p.acc_fit:.6f}", f"{p.stderr_dl:.6f}", f"{p.stderr_fit:.6f}"]
            for p in self.points
        ]
        return write_table(path, ["sigma", "acc_dl", "acc_fit", "stderr_dl", "stderr_fit"], rows, run_id)


def _subsample(count: int, total: int, seed: int) -> list[int]:
    if count >= total:
        return list(range(total))
    return sorted(int(i) for i in seeding.stream(seed, "fit-subset").choice(total, size=count, replace=False))


def paired_test_sets(
    clean: list[Record], picks: Sequence[int], sigma: float, seed: int, repeat: int
) -> tuple[list[Record], list[Record]]:
    """One noise draw over ``clean``; the second list holds the same noisy records at ``picks``."""
    noisy = noised_copy(clean, sigma, seed, repeat)
    return noisy, [noisy[i] for i in picks]


def dl_vs_fit_curve(
    sigmas: Sequence[float],
    network: DecoderNetwork,
    config: RunConfig,
    jobs: int = 1,
) -> DlFitCurve:
    """Network and fit-baseline accuracy on identical noisy test sets.

    The network sees every test spectrum; the fit sees a fixed subset of
    ``config.eval.fit_spectra`` of them and evaluates the model through a tabulated
    transmission curve.
    """
    clean = _clean_test_records(config)
    picks = _subsample(config.eval.fit_spectra, len(clean), config.seed)
    fit_cfg = config.fit.model_copy(update={"tabulated": True})
    curve = transmission_curve_for(config.codec, config.atom, config.transmission, fit_cfg.table_points)
    points = []
    for sigma in sigmas:
        dl, fit = [], []
        for rep in range(config.eval.repeats):
            noisy_all, noisy = paired_test_sets(clean, picks, sigma, config.seed, rep)
            dl.append(evaluate_network(network, noisy_all, config.codec.threshold, config.codec.class_bits)[0])
            fits = fit_many(
                [r.spectrum for r in noisy], config.codec, config.atom, config.transmission, fit_cfg, curve, jobs=jobs
            )
            fit.append(exact_match_accuracy([f.result.bits for f in fits], [r.label.frame for r in noisy]))
        (acc_dl, se_dl), (acc_fit, se_fit) = _mean_stderr(dl), _mean_stderr(fit)
        logger.info("sigma %.3g: network %.4f, fit %.4f", sigma, acc_dl, acc_fit)
        points.append(CurvePoint(float(sigma), acc_dl, acc_fit, se_dl, se_fit))
    return DlFitCurve(points)


# ---------------------------------------------------------------------------
# Timing


def machine_descriptor() -> str:
    memory_gb = psutil.virtual_memory().total / 2**30
    return (
        f"{platform.platform()} | {platform.processor() or platform.machine()} | "
        f"{psutil.cpu_count(logical=False)} cores / {psutil.cpu_count(logical=True)} threads | "
        f"{memory_gb:.1f} GiB | Python {platform.python_version()} | numpy {np.__version__}"
    )


@dataclass
class BenchReport:
    n_spectra: int
    dl_median_ms: float
    fit_median_ms: float
    ratio: float
    dl_batch_ms: dict[int, float] = field(default_factory=dict)
    machine: str = ""

    def to_json(self, path: str | os.PathLike[str], run_id: str | None = None) -> Path:
        data = asdict(self)
        data["dl_batch_ms"] = {str(k): v for k, v in self.dl_batch_ms.items()}
        return write_json(path, data, run_id)


def bench_inference(
    network: DecoderNetwork,
    spectra: Sequence[Spectrum],
    config: RunConfig,
    fit_cfg: FitConfig | None = None,
    warmup: int = 2,
) -> BenchReport:
    """Median per-spectrum latency of the network and of the exact-model fit.

    Warm-up calls are excluded. Batched network throughput is timed at batch sizes
    ``n/4``, ``n/2`` and ``n`` to expose the scaling with batch count.
    """
    if len(spectra) < 20:
        raise ValueError(f"Benchmark needs at least 20 spectra, got {len(spectra)}")
    fit_cfg = fit_cfg or config.fit
    for s in spectra[:warmup]:
        predict_bits(network, s, config.codec.threshold)

    dl_ms = []
    for s in spectra:
        start = time.perf_counter()
        predict_bits(network, s, config.codec.threshold)
        dl_ms.append(1e3 * (time.perf_counter() - start))

    batch_ms = {}
    for size in sorted({max(1, len(spectra) // 4), max(1, len(spectra) // 2), len(spectra)}):
        start = time.perf_counter()
        predict_frames(network, spectra[:size], config.codec.threshold)
        batch_ms[size] = 1e3 * (time.perf_counter() - start)

    fit_ms = []
    for s in spectra:
        start = time.perf_counter()
        fit_phases(s, config.codec, config.atom, config.transmission, None, fit_cfg)
        fit_ms.append(1e3 * (time.perf_counter() - start))

    dl_median, fit_median = statistics.median(dl_ms), statistics.median(fit_ms)
    report = BenchReport(
        n_spectra=len(spectra),
        dl_median_ms=dl_median,
        fit_median_ms=fit_median,
        ratio=fit_median / dl_median,
        dl_batch_ms=batch_ms,
        machine=machine_descriptor(),
    )
    logger.info(
        "Inference: network %.3f ms, fit %.1f ms per spectrum (ratio %.0f)",
        dl_median,
        fit_median,
        report.ratio,
    )
    return report


# ---------------------------------------------------------------------------
# Payload demo


@dataclass
class PayloadReport:
    payload_bits: int
    frames: int
    frame_accuracy: float
    bit_exact: bool
    recovered: np.ndarray | None = field(repr=False, default=None)

    def summary(self) -> dict[str, Any]:
        return {
            "payload_bits": self.payload_bits,
            "frames": self.frames,
            "frame_accuracy": self.frame_accuracy,
            "bit_exact": self.bit_exact,
        }


def payload_roundtrip(
    payload: bytes | Sequence[int] | np.ndarray,
    network: DecoderNetwork,
    config: RunConfig,
    sigma: float,
    seed: int | None = None,
) -> PayloadReport:
    """Send a payload through frames, drives, noisy spectra and the decoder.

    ``payload`` is either bytes or a bit sequence (e.g. the 441 modules of a 21x21 QR
    code). Every frame's spectrum gets an independent noise draw.
    """
    codec = config.codec
    if codec.active_bits is not None:
        raise ConfigError("Payload transport needs every message bin active")
    if isinstance(payload, bytes | bytearray):
        sent_bits = np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8))
        frames = payload_to_frames(bytes(payload), codec)
    else:
        sent_bits = np.asarray(payload, dtype=np.uint8).ravel()
        frames = bits_to_frames(sent_bits, codec)
    seed = config.seed if seed is None else seed

    clean: dict[Frame, np.ndarray] = {}
    spectra = []
    for index, frame in enumerate(frames):
        if frame not in clean:
            drive = field_from_label(encode_bits(frame, codec), codec)
            sim = simulate_spectrum(drive, config.atom, config.transmission, config.sampling.n, config.sampling.dt)
            clean[frame] = minmax_scale(sim.samples)
        base = Spectrum(clean[frame], config.sampling.dt)
        noisy = add_white_noise(base, sigma, seeding.stream(seed, "payload", index))
        spectra.append(Spectrum(minmax_scale(noisy.samples), noisy.dt))

    received = predict_frames(network, spectra, codec.threshold)
    accuracy = exact_match_accuracy(received, frames)
    try:
        recovered = frames_to_bits(received)
    except FramingError as exc:
        logger.warning("Received frames do not reassemble: %s", exc)
        recovered = None
    exact = recovered is not None and np.array_equal(recovered, sent_bits)
    logger.info("Payload of %d bits over %d frames: frame accuracy %.4f, exact=%s", sent_bits.size, len(frames), accuracy, exact)
    return PayloadReport(int(sent_bits.size), len(frames), accuracy, bool(exact), recovered)


# ---------------------------------------------------------------------------
# Report writers


def write_table(
    path: str | os.PathLike[str], header: Sequence[str], rows: Sequence[Sequence[Any]], run_id: str | None = None
) -> Path:
    """CSV with an optional leading ``# run_id:`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        if run_id:
            handle.write(f"# run_id: {run_id}\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_json(path: str | os.PathLike[str], data: dict[str, Any], run_id: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"run_id": run_id, **data} if run_id else dict(data)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return path
