"""Configuration models and the key-value config file loader.

Every numeric default of the package lives here. Angular quantities are rad/s and
times are seconds. In config files an angular quantity may be written as
``2pi*<hertz>``, e.g. ``gamma_e = 2pi*6e6``.
"""

from __future__ import annotations

import configparser
import json
import math
import os
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
CONFIG_DIR_ENV = "RYDBERGFDM_CONFIG_DIR"


class _Model(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class AtomParams(_Model):
    """Rabi frequencies, detunings and decay rates of the four-level ladder."""

    omega_p: float = Field(TWO_PI * 2e6, ge=0, description="probe Rabi frequency")
    omega_c: float = Field(TWO_PI * 4e6, ge=0, description="coupling Rabi frequency")
    delta_p: float = 0.0
    delta_c: float = 0.0
    delta_s: float = 0.0
    gamma_e: float = Field(TWO_PI * 6e6, ge=0, description="|e> -> |g> decay")
    gamma_r: float = Field(TWO_PI * 50e3, ge=0, description="|r> -> |e> decay")
    gamma_s: float = Field(TWO_PI * 50e3, ge=0, description="|s> -> |r> decay")

    def rate_scale(self, omega_s: float = 0.0) -> float:
        """Largest magnitude rate in the problem (rad/s), at least 1."""
        return max(
            1.0,
            self.omega_p,
            self.omega_c,
            abs(omega_s),
            abs(self.delta_p),
            abs(self.delta_p + self.delta_c),
            abs(self.delta_p + self.delta_c + self.delta_s),
            self.gamma_e,
            self.gamma_r,
            self.gamma_s,
        )


class TransmissionModel(_Model):
    contrast: float = Field(1.0, gt=0, description="lumped |mu_ge|^2/(eps0 hbar) x depth")


class SamplingConfig(_Model):
    n: int = Field(1000, ge=1, description="samples per spectrum")
    dt: float = Field(1e-6, gt=0, description="sample period (s)")


class CodecConfig(_Model):
    n_bins: int = Field(4, ge=2)
    delta_f: float = Field(2e3, gt=0, description="bin spacing (Hz)")
    center_hz: float = Field(17.62e9, gt=0, description="nominal MW resonance (Hz)")
    amplitude_ratio: float = Field(10.0, gt=1, description="A_ref / A_i")
    reference_amplitude: float = Field(TWO_PI * 2e6, gt=0, description="A_ref (rad/s)")
    active_bits: int | None = Field(
        None, ge=1, description="message bins carrying data; None means all"
    )
    threshold: float = Field(0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_active_bits(self) -> CodecConfig:
        if self.active_bits is not None and self.active_bits > self.n_bins - 1:
            raise ValueError(
                f"active_bits={self.active_bits} exceeds message bins {self.n_bins - 1}"
            )
        return self

    @property
    def message_bits(self) -> int:
        return self.n_bins - 1

    @property
    def class_bits(self) -> int:
        """Number of bits that distinguish frame classes."""
        return self.message_bits if self.active_bits is None else self.active_bits


class NetworkArchitecture(_Model):
    filters: int = Field(32, ge=1)
    kernel_len: int = Field(16, ge=1)
    pool: int = Field(4, ge=1)
    hidden: int = Field(32, ge=1, description="Bi-LSTM units per direction")
    bn_momentum: float = Field(0.99, gt=0, lt=1)
    bn_eps: float = Field(1e-3, ge=0)


class TrainConfig(_Model):
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    plateau_patience: int = Field(10, ge=1)
    plateau_factor: float = Field(0.1, gt=0, lt=1)
    epochs: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)
    augment_sigma: float = Field(0.5, ge=0)
    rmsprop_decay: float = Field(0.9, gt=0, lt=1)
    rmsprop_eps: float = Field(1e-8, gt=0)


class DatasetConfig(_Model):
    n_samples_per_class: int = Field(150, ge=1)
    noise_sigma: float = Field(0.05, ge=0)
    seed: int = Field(0, ge=0)


class DatasetSpec(_Model):
    """Everything needed to regenerate a dataset bit for bit."""

    codec: CodecConfig = CodecConfig()
    atom: AtomParams = AtomParams()
    model: TransmissionModel = TransmissionModel()
    n_samples_per_class: int = Field(150, ge=1)
    n: int = Field(1000, ge=1)
    dt: float = Field(1e-6, gt=0)
    noise_sigma: float = Field(0.05, ge=0)
    seed: int = Field(0, ge=0)


class SplitPlan(_Model):
    test_fraction: float = Field(0.2, gt=0, lt=1)
    fold_count: int = Field(4, ge=2)


class FitConfig(_Model):
    max_iterations: int = Field(2000, ge=1)
    tolerance: float = Field(1e-8, gt=0, description="simplex spread of objective values")
    parameter_tolerance: float = Field(1e-6, gt=0, description="simplex spread of parameters")
    tabulated: bool = Field(False, description="evaluate through a TransmissionCurve")
    table_points: int = Field(2048, ge=16)


class EvalConfig(_Model):
    sigmas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5)
    repeats: int = Field(5, ge=1)
    bench_spectra: int = Field(20, ge=1)
    fit_spectra: int = Field(160, ge=1, description="test spectra fitted per sweep point")


class RunConfig(_Model):
    """Aggregate of every section of a config file."""

    seed: int = Field(0, ge=0)
    atom: AtomParams = AtomParams()
    transmission: TransmissionModel = TransmissionModel()
    sampling: SamplingConfig = SamplingConfig()
    codec: CodecConfig = CodecConfig()
    network: NetworkArchitecture = NetworkArchitecture()
    train: TrainConfig = TrainConfig()
    dataset: DatasetConfig = DatasetConfig()
    split: SplitPlan = SplitPlan()
    fit: FitConfig = FitConfig()
    eval: EvalConfig = EvalConfig()

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            codec=self.codec,
            atom=self.atom,
            model=self.transmission,
            n_samples_per_class=self.dataset.n_samples_per_class,
            n=self.sampling.n,
            dt=self.sampling.dt,
            noise_sigma=self.dataset.noise_sigma,
            seed=self.dataset.seed,
        )

    def with_seed(self, seed: int) -> RunConfig:
        """Route a single seed to every random consumer."""
        return self.apply_overrides(
            {"seed": seed, "dataset.seed": seed, "train.seed": seed}
        )

    def apply_overrides(self, overrides: dict[str, Any]) -> RunConfig:
        """Return a copy with dotted ``section.key`` values replaced and re-validated."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            section, _, key = dotted.rpartition(".")
            target = data
            if section:
                if section not in data or not isinstance(data[section], dict):
                    raise ConfigError(f"Unknown config section '{section}' in '{dotted}'")
                target = data[section]
            if key not in target:
                raise ConfigError(f"Unknown config key '{dotted}'")
            target[key] = _coerce(value) if isinstance(value, str) else value
        return _validate(data, source="overrides")

    def snapshot(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_snapshot(cls, snapshot: dict[str, Any]) -> RunConfig:
        return _validate(snapshot, source="snapshot")


def _coerce(raw: str) -> Any:
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("none", "null", ""):
        return None
    if "," in text:
        return [_coerce(part) for part in text.split(",") if part.strip()]
    for prefix in ("2pi*", "2*pi*"):
        if lowered.startswith(prefix):
            try:
                return TWO_PI * float(text[len(prefix) :])
            except ValueError as exc:
                raise ConfigError(f"Cannot parse angular quantity '{raw}'") from exc
    return text


def _validate(data: dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration from {source}:\n{exc}") from exc


def resolve_config_path(name: str | os.PathLike[str]) -> Path:
    """Find a config file, falling back to ``$RYDBERGFDM_CONFIG_DIR``."""
    path = Path(name)
    if path.is_file():
        return path
    config_dir = os.environ.get(CONFIG_DIR_ENV)
    if config_dir and not path.is_absolute():
        candidate = Path(config_dir) / path
        if candidate.is_file():
            return candidate
    raise ConfigError(f"Config file not found: {path}")


def load_config(name: str | os.PathLike[str] | None = None) -> RunConfig:
    """Read a key-value config file over the built-in defaults."""
    if name is None:
        return RunConfig()
    path = resolve_config_path(name)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"Cannot parse config file {path}: {exc}") from exc

    data = RunConfig().model_dump()
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                data[key] = _coerce(raw)
            continue
        if section not in data or not isinstance(data[section], dict):
            raise ConfigError(f"Unknown section [{section}] in {path}")
        for key, raw in parser.items(section):
            data[section][key] = _coerce(raw)
    config = _validate(data, source=str(path))
    if parser.has_option("run", "seed"):
        config = config.with_seed(config.seed)
    return config


def dump_snapshot(config: RunConfig) -> str:
    return json.dumps(config.snapshot(), indent=2, sort_keys=True)
