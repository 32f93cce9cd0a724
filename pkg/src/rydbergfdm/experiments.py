"""Named end-to-end experiments and run manifests."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import seeding
from .config import RunConfig
from .dataset import generate_dataset, split, write_dataset
from .errors import ConfigError
from .evaluation import (
    dl_vs_fit_curve,
    evaluate_network,
    exact_match_accuracy,
    payload_roundtrip,
    write_json,
)
from .fitting import fit_many, transmission_curve_for, write_fit_results
from .network.checkpoint import save_checkpoint
from .network.training import cross_validate
from .version import __version__

logger = logging.getLogger(__name__)

QR_MODULES = 21 * 21


@dataclass(frozen=True)
class Profile:
    description: str
    overrides: dict[str, Any] = field(default_factory=dict)
    payload_bits: int = 0
    dl_vs_fit: bool = False
    fit_baseline: bool = False


PROFILES: dict[str, Profile] = {
    "fig2": Profile(
        "4-bin, 2 kHz spacing: 4-fold training, test accuracy and confusion matrix",
        {"codec.n_bins": 4, "dataset.noise_sigma": 0.05},
    ),
    "fig3-qr": Profile(
        "4-bin model carrying a 441-bit QR payload at sigma 0.05",
        {"codec.n_bins": 4, "dataset.noise_sigma": 0.05},
        payload_bits=QR_MODULES,
    ),
    "fig4-noise": Profile(
        "Network trained without noise against the curve-fitting baseline over test noise",
        {"codec.n_bins": 4, "dataset.noise_sigma": 0.0},
        dl_vs_fit=True,
    ),
    "fig5-20bin": Profile(
        "20 bins at 2 kHz with the first 3 message bits active (8 classes)",
        {"codec.n_bins": 20, "codec.active_bits": 3, "dataset.noise_sigma": 0.05},
        fit_baseline=True,
    ),
    "fig5-200khz": Profile(
        "4 bins at 200 kHz spacing, 10 ns sampling",
        {"codec.n_bins": 4, "codec.delta_f": 200e3, "sampling.dt": 10e-9, "dataset.noise_sigma": 0.05},
    ),
}


def profile_config(name: str, base: RunConfig | None = None) -> RunConfig:
    """``base`` (defaults when omitted) with the profile's overrides applied."""
    if name not in PROFILES:
        raise ConfigError(f"Unknown experiment profile '{name}'; choose from {sorted(PROFILES)}")
    return (base or RunConfig()).apply_overrides(PROFILES[name].overrides)


def run_id_for(command: str, arguments: dict[str, Any], config: RunConfig) -> str:
    """Content hash of everything that determines a run's outputs; ``out`` is excluded."""
    inputs = {k: v for k, v in arguments.items() if k != "out"}
    blob = json.dumps(
        {"command": command, "arguments": inputs, "config": config.snapshot()},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Record of one CLI run, sufficient to repeat it."""

    command: str
    arguments: dict[str, Any]
    config: dict[str, Any]
    seed: int
    run_id: str
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list[str] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, arguments: dict[str, Any], config: RunConfig) -> RunManifest:
        return cls(
            command=command,
            arguments=arguments,
            config=config.snapshot(),
            seed=config.seed,
            run_id=run_id_for(command, arguments, config),
        )

    def run_config(self) -> RunConfig:
        return RunConfig.from_snapshot(self.config)

    def add_output(self, path: str | os.PathLike[str]):
        self.outputs.append(str(path))

    def write(self, path: str | os.PathLike[str]) -> Path:
        self.finished = _now()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, default=float) + "\n", encoding="utf-8")
        logger.info("Run %s manifest written to %s", self.run_id, path)
        return path

    @classmethod
    def read(cls, path: str | os.PathLike[str]) -> RunManifest:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**data)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"Cannot read run manifest {path}: {exc}") from exc


def qr_payload(seed: int, bits: int = QR_MODULES) -> np.ndarray:
    """Stand-in for a 21x21 QR symbol: seeded uniform bits, row-major."""
    return seeding.stream(seed, "qr-payload").integers(0, 2, size=bits, dtype=np.uint8)


def run_experiment(
    name: str,
    config: RunConfig,
    out_dir: str | os.PathLike[str],
    manifest: RunManifest,
    jobs: int = 1,
) -> dict[str, Any]:
    """Generate, split, cross-validate, test and report one profile into ``out_dir``.

    ``config`` must already carry the profile overrides. Every artifact path is
    registered on ``manifest``; the returned summary is also stored there.
    """
    profile = PROFILES[name]
    out = Path(out_dir)
    run_id = manifest.run_id
    logger.info("Experiment %s: %s", name, profile.description)

    spec = config.dataset_spec()
    records = generate_dataset(spec, jobs=jobs)
    manifest.add_output(write_dataset(records, out / "dataset.ryds", spec, run_id))
    folds = split(records, config.split, config.seed)
    manifest.add_output(write_dataset(folds.test, out / "test.ryds", spec, run_id))

    cv = cross_validate(folds, config.train, config.network, jobs=jobs)
    for model in cv.models:
        manifest.add_output(model.curves.to_csv(out / f"loss_fold{model.fold}.csv", run_id))
    best = cv.best.network
    manifest.add_output(save_checkpoint(best, out / "model.json", config.seed, run_id, config.train))

    accuracy, matrix = evaluate_network(best, folds.test, config.codec.threshold, config.codec.class_bits)
    manifest.add_output(matrix.to_csv(out / "confusion.csv", run_id))
    summary: dict[str, Any] = {
        "profile": name,
        "best_fold": cv.best_index,
        "val_mse": [m.best_val_mse for m in cv.models],
        "test_records": len(folds.test),
        "accuracy": accuracy,
        "classes": matrix.n_classes,
    }

    if profile.payload_bits:
        report = payload_roundtrip(
            qr_payload(config.seed, profile.payload_bits), best, config, config.dataset.noise_sigma
        )
        summary["payload"] = report.summary()
        manifest.add_output(write_json(out / "payload.json", report.summary(), run_id))

    if profile.dl_vs_fit:
        curve = dl_vs_fit_curve(config.eval.sigmas, best, config, jobs=jobs)
        manifest.add_output(curve.to_csv(out / "dl_vs_fit.csv", run_id))
        summary["dl_vs_fit"] = [asdict(p) for p in curve.points]

    if profile.fit_baseline:
        subset = folds.test[: config.eval.fit_spectra]
        fit_cfg = config.fit.model_copy(update={"tabulated": True})
        table = transmission_curve_for(config.codec, config.atom, config.transmission, fit_cfg.table_points)
        fits = fit_many(
            [r.spectrum for r in subset], config.codec, config.atom, config.transmission, fit_cfg, table, jobs=jobs
        )
        truths = [r.label.frame for r in subset]
        summary["fit_accuracy"] = exact_match_accuracy([f.result.bits for f in fits], truths)
        manifest.add_output(write_fit_results(fits, truths, out / "fit_baseline.csv", run_id))

    manifest.summary = summary
    manifest.add_output(write_json(out / "summary.json", summary, run_id))
    logger.info("Experiment %s finished: test accuracy %.4f", name, accuracy)
    return summary
