"""Labelled synthetic spectra: generation, noise, splitting and persistence.

Binary format (all integers little endian)::

    b"RYDS1"
    uint32            header length in bytes
    header            UTF-8 JSON: count, n, n_bins, dt, seed, run_id, spec snapshot
    float32[count*n]  samples, record-major
    uint8[count*n_bins] label bits, record-major
    uint32            CRC32 of every preceding byte
"""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from . import seeding
from .codec import PhaseLabel, encode_bits, field_from_label, frame_classes
from .config import DatasetSpec, SplitPlan
from .errors import DatasetFormatError, ShapeError, TrainingError
from .network.layers import minmax_scale
from .parallel import parallel_map
from .physics import Spectrum, simulate_spectrum

logger = logging.getLogger(__name__)

MAGIC = b"RYDS1"
_U32 = struct.Struct("<I")


class Record(NamedTuple):
    spectrum: Spectrum
    label: PhaseLabel


def add_white_noise(s: Spectrum, sigma: float, rng: np.random.Generator) -> Spectrum:
    """Add independent zero-mean Gaussian noise of standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError(f"Noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return Spectrum(s.samples.copy(), s.dt, s.label)
    return Spectrum(s.samples + rng.normal(0.0, sigma, size=len(s)), s.dt, s.label)


def _clean_class_spectrum(label: PhaseLabel, spec: DatasetSpec) -> np.ndarray:
    drive = field_from_label(label, spec.codec)
    clean = simulate_spectrum(drive, spec.atom, spec.model, spec.n, spec.dt, label=label)
    return minmax_scale(clean.samples)


def generate_dataset(spec: DatasetSpec, jobs: int = 1) -> list[Record]:
    """Balanced records over every frame class, ``n_samples_per_class`` each.

    Each record is the class's noiseless spectrum, min-max scaled, plus white noise
    drawn from the stream ``("dataset", class, sample)``, scaled again and rounded to
    float32. Records come out class-major.
    """
    labels = [encode_bits(frame, spec.codec) for frame in frame_classes(spec.codec)]
    logger.info(
        "Generating %d classes x %d spectra (n=%d, sigma=%g)",
        len(labels),
        spec.n_samples_per_class,
        spec.n,
        spec.noise_sigma,
    )
    clean = parallel_map(partial(_clean_class_spectrum, spec=spec), labels, jobs=jobs)

    records = []
    for class_index, (label, base) in enumerate(zip(labels, clean)):
        template = Spectrum(base, spec.dt, label)
        for sample in range(spec.n_samples_per_class):
            rng = seeding.stream(spec.seed, "dataset", class_index, sample)
            noisy = add_white_noise(template, spec.noise_sigma, rng)
            samples = minmax_scale(noisy.samples).astype(np.float32).astype(np.float64)
            records.append(Record(Spectrum(samples, spec.dt, label), label))
    return records


def noised_copy(records: list[Record], sigma: float, seed: int, repeat: int = 0) -> list[Record]:
    """Fresh noise draw over existing records, re-scaled to [0, 1]."""
    out = []
    for index, record in enumerate(records):
        rng = seeding.stream(seed, "test-noise", repeat, index)
        noisy = add_white_noise(record.spectrum, sigma, rng)
        out.append(Record(Spectrum(minmax_scale(noisy.samples), noisy.dt, record.label), record.label))
    return out


def records_to_arrays(records: list[Record]) -> tuple[np.ndarray, np.ndarray]:
    """Stack spectra ``(count, n)`` and labels ``(count, n_bins)`` as float64."""
    if not records:
        raise TrainingError("No records to stack")
    lengths = {len(r.spectrum) for r in records}
    bins = {r.label.n_bins for r in records}
    if len(lengths) != 1 or len(bins) != 1:
        raise ShapeError(f"Records disagree on shape: lengths {lengths}, bins {bins}")
    x = np.stack([r.spectrum.samples for r in records])
    y = np.stack([r.label.bits for r in records]).astype(np.float64)
    return x, y


# ---------------------------------------------------------------------------
# Splitting


@dataclass
class Split:
    """Held-out test records plus cross-validation folds."""

    test: list[Record]
    folds: list[list[Record]]
    assignment: np.ndarray = field(repr=False)  # per input record: -1 test, else fold

    def train_val(self, k: int) -> tuple[list[Record], list[Record]]:
        """Fold ``k`` as validation, the other folds as training data."""
        train = [r for i, fold in enumerate(self.folds) if i != k for r in fold]
        return train, list(self.folds[k])


def split(records: list[Record], plan: SplitPlan, seed: int) -> Split:
    """Shuffle, carve off the test set, partition the rest into equal folds."""
    n = len(records)
    if n < 5 * plan.fold_count:
        raise TrainingError(
            f"{n} records are too few to split into a test set and {plan.fold_count} folds"
        )
    order = seeding.stream(seed, "split").permutation(n)
    n_test = int(round(n * plan.test_fraction))
    assignment = np.full(n, -1, dtype=np.int64)
    fold_indices = np.array_split(order[n_test:], plan.fold_count)
    for k, idx in enumerate(fold_indices):
        assignment[idx] = k
    logger.info(
        "Split %d records: %d test, folds of %s", n, n_test, [len(i) for i in fold_indices]
    )
    return Split(
        test=[records[i] for i in order[:n_test]],
        folds=[[records[i] for i in idx] for idx in fold_indices],
        assignment=assignment,
    )


# ---------------------------------------------------------------------------
# Persistence


@dataclass
class DatasetFile:
    records: list[Record]
    header: dict[str, Any]

    @property
    def run_id(self) -> str | None:
        return self.header.get("run_id")


def write_dataset(
    records: list[Record],
    path: str | os.PathLike[str],
    spec: DatasetSpec | None = None,
    run_id: str | None = None,
) -> Path:
    """Write records; samples are stored as float32."""
    n = len(records[0].spectrum) if records else 0
    n_bins = records[0].label.n_bins if records else 0
    if records:
        records_to_arrays(records)
    header = {
        "format": 1,
        "count": len(records),
        "n": n,
        "n_bins": n_bins,
        "dt": records[0].spectrum.dt if records else None,
        "seed": spec.seed if spec is not None else None,
        "run_id": run_id,
        "spec": spec.model_dump(mode="json") if spec is not None else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    samples = np.zeros((len(records), n), dtype="<f4")
    labels = np.zeros((len(records), n_bins), dtype=np.uint8)
    for i, record in enumerate(records):
        samples[i] = record.spectrum.samples
        labels[i] = record.label.bits
    body = MAGIC + _U32.pack(len(header_bytes)) + header_bytes + samples.tobytes() + labels.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + _U32.pack(zlib.crc32(body)))
    logger.info("Wrote %d records to %s", len(records), path)
    return path


def read_dataset(path: str | os.PathLike[str]) -> DatasetFile:
    """Read and verify a dataset file."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"Cannot read dataset {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 2 * _U32.size or not blob.startswith(MAGIC):
        raise DatasetFormatError(f"{path} is not a dataset file (bad magic)")
    body, (crc,) = blob[:-_U32.size], _U32.unpack(blob[-_U32.size :])
    if zlib.crc32(body) != crc:
        raise DatasetFormatError(f"Checksum mismatch in {path}")

    offset = len(MAGIC)
    (header_len,) = _U32.unpack_from(body, offset)
    offset += _U32.size
    try:
        header = json.loads(body[offset : offset + header_len].decode("utf-8"))
        count, n, n_bins = int(header["count"]), int(header["n"]), int(header["n_bins"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"Malformed header in {path}: {exc}") from exc
    offset += header_len

    sample_bytes, label_bytes = count * n * 4, count * n_bins
    if len(body) - offset != sample_bytes + label_bytes:
        raise DatasetFormatError(
            f"{path}: payload is {len(body) - offset} bytes, header implies {sample_bytes + label_bytes}"
        )
    samples = np.frombuffer(body, dtype="<f4", count=count * n, offset=offset).reshape(count, n)
    labels = np.frombuffer(body, dtype=np.uint8, count=count * n_bins, offset=offset + sample_bytes)
    labels = labels.reshape(count, n_bins)

    records = []
    for row, bits in zip(samples, labels):
        label = PhaseLabel(bits.copy())
        records.append(Record(Spectrum(row.astype(np.float64), header["dt"], label), label))
    return DatasetFile(records, header)


def export_csv(records: list[Record], path: str | os.PathLike[str], run_id: str | None = None) -> Path:
    """Label bit columns then sample columns, 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        if run_id:
            handle.write(f"# run_id: {run_id}\n")
        writer = csv.writer(handle)
        if records:
            n_bins, n = records[0].label.n_bins, len(records[0].spectrum)
            writer.writerow([f"bit_{k}" for k in range(n_bins)] + [f"s_{i}" for i in range(n)])
        for record in records:
            writer.writerow(
                [int(b) for b in record.label.bits]
                + [f"{v:.9g}" for v in record.spectrum.samples]
            )
    return path
