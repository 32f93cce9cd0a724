"""Master-equation curve fitting baseline.

A spectrum is explained as ``offset + scale * T(t; phases)`` where ``T`` is the
quasi-static transmission of the nominal drive with free message-bin phases. The fit
is a Nelder-Mead simplex over the phases and the two affine terms.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .codec import Frame, bin_offsets_hz
from .config import AtomParams, CodecConfig, FitConfig, TransmissionModel
from .errors import FitConvergenceWarning
from .parallel import parallel_map
from .physics import Spectrum, TransmissionCurve, beat_envelope, transmission_series

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FitResult:
    phases: np.ndarray  # message bins, radians in [0, 2 pi)
    scale: float
    offset: float
    residual: float
    iterations: int
    converged: bool
    bits: Frame
    trace: tuple[float, ...] = ()  # best objective after each simplex iteration


def wrap_phases(phases) -> np.ndarray:
    wrapped = np.mod(np.asarray(phases, dtype=np.float64), TWO_PI)
    wrapped[wrapped >= TWO_PI] = 0.0
    return wrapped


def quantize_phases(phases) -> Frame:
    """Nearest of {0, pi} modulo 2 pi; exactly pi/2 or 3 pi/2 quantizes to 0."""
    wrapped = wrap_phases(phases)
    return Frame(tuple((np.abs(wrapped - math.pi) < math.pi / 2).astype(int)))


def transmission_curve_for(
    cfg: CodecConfig, atom: AtomParams, model: TransmissionModel, points: int = 2048
) -> TransmissionCurve:
    """Tabulated transmission covering every envelope value the codec can produce."""
    peak = cfg.reference_amplitude * (1.0 + (cfg.n_bins - 1) / cfg.amplitude_ratio)
    return TransmissionCurve.build(atom, model, 1.01 * peak, points)


class _Model:
    """Transmission of the nominal drive as a function of the message phases."""

    def __init__(self, n: int, dt: float, cfg: CodecConfig, atom, model, curve):
        self.t = np.arange(n) * dt
        self.offsets = TWO_PI * bin_offsets_hz(cfg)
        self.amplitudes = np.full(cfg.n_bins, cfg.reference_amplitude / cfg.amplitude_ratio)
        self.amplitudes[-1] = cfg.reference_amplitude
        self.atom, self.model, self.curve = atom, model, curve

    def __call__(self, message_phases: np.ndarray) -> np.ndarray:
        phases = np.append(message_phases, 0.0)
        envelope = beat_envelope(self.amplitudes, self.offsets, phases, self.t)
        if self.curve is not None:
            return self.curve(envelope)
        return transmission_series(self.atom, self.model, envelope)


def _affine_start(samples: np.ndarray, predicted: np.ndarray) -> tuple[float, float]:
    design = np.column_stack([predicted, np.ones_like(predicted)])
    (scale, offset), *_ = np.linalg.lstsq(design, samples, rcond=None)
    return float(scale), float(offset)


def fit_phases(
    spectrum: Spectrum,
    cfg: CodecConfig,
    atom: AtomParams,
    model: TransmissionModel,
    init=None,
    fit_cfg: FitConfig | None = None,
    curve: TransmissionCurve | None = None,
) -> FitResult:
    """Least-squares fit of message phases plus scale and offset.

    ``init`` are the starting message phases (zeros by default); scale and offset start
    at their linear least-squares values for those phases. When the simplex hits its
    iteration cap a ``FitConvergenceWarning`` is issued and the best point found is
    returned with ``converged=False``.
    """
    fit_cfg = fit_cfg or FitConfig()
    n_phases = cfg.message_bits
    init = np.zeros(n_phases) if init is None else np.asarray(init, dtype=np.float64).ravel()
    if init.size != n_phases:
        raise ValueError(f"init has {init.size} phases, codec has {n_phases} message bins")

    forward = _Model(len(spectrum), spectrum.dt, cfg, atom, model, curve)
    samples = spectrum.samples

    def objective(x: np.ndarray) -> float:
        fitted = x[-1] + x[-2] * forward(x[:n_phases])
        return float(np.sum((samples - fitted) ** 2))

    x0 = np.concatenate([init, _affine_start(samples, forward(init))])
    trace: list[float] = []

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        callback=record,
        options={
            "maxiter": fit_cfg.max_iterations,
            "maxfev": 2 * fit_cfg.max_iterations * (n_phases + 3),
            "fatol": fit_cfg.tolerance,
            "xatol": fit_cfg.parameter_tolerance,
        },
    )
    if not result.success:
        warnings.warn(
            f"Simplex fit stopped after {result.nit} iterations: {result.message}",
            FitConvergenceWarning,
            stacklevel=2,
        )
    phases = wrap_phases(result.x[:n_phases])
    logger.debug("Fit: residual %.3e after %d iterations", result.fun, result.nit)
    return FitResult(
        phases=phases,
        scale=float(result.x[-2]),
        offset=float(result.x[-1]),
        residual=float(result.fun),
        iterations=int(result.nit),
        converged=bool(result.success),
        bits=quantize_phases(phases),
        trace=tuple(trace),
    )


def classify_by_fit(
    spectrum: Spectrum,
    cfg: CodecConfig,
    atom: AtomParams,
    model: TransmissionModel,
    fit_cfg: FitConfig | None = None,
    curve: TransmissionCurve | None = None,
) -> Frame:
    """Fit from all-zero phases and quantize; no prior knowledge of the answer."""
    return fit_phases(spectrum, cfg, atom, model, None, fit_cfg, curve).bits


def best_of_restarts(
    spectrum: Spectrum,
    cfg: CodecConfig,
    atom: AtomParams,
    model: TransmissionModel,
    fit_cfg: FitConfig | None = None,
    curve: TransmissionCurve | None = None,
    starts: Sequence[float] = (0.0, math.pi),
) -> FitResult:
    """Lowest-residual fit over uniform starting phases (all 0, then all pi)."""
    fits = [
        fit_phases(spectrum, cfg, atom, model, np.full(cfg.message_bits, s), fit_cfg, curve)
        for s in starts
    ]
    return min(fits, key=lambda f: f.residual)


@dataclass(frozen=True)
class TimedFit:
    result: FitResult
    wall_ms: float


def _timed_fit(
    spectrum: Spectrum, cfg, atom, model, fit_cfg, curve, restarts: bool
) -> TimedFit:
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitConvergenceWarning)
        if restarts:
            result = best_of_restarts(spectrum, cfg, atom, model, fit_cfg, curve)
        else:
            result = fit_phases(spectrum, cfg, atom, model, None, fit_cfg, curve)
    if not result.converged:
        logger.warning("Fit did not converge (residual %.3e)", result.residual)
    return TimedFit(result, 1e3 * (time.perf_counter() - start))


def fit_many(
    spectra: Sequence[Spectrum],
    cfg: CodecConfig,
    atom: AtomParams,
    model: TransmissionModel,
    fit_cfg: FitConfig | None = None,
    curve: TransmissionCurve | None = None,
    restarts: bool = False,
    jobs: int = 1,
) -> list[TimedFit]:
    """Independent timed fits, in input order."""
    fit_cfg = fit_cfg or FitConfig()
    if curve is None and fit_cfg.tabulated:
        curve = transmission_curve_for(cfg, atom, model, fit_cfg.table_points)
    job = partial(
        _timed_fit,
        cfg=cfg,
        atom=atom,
        model=model,
        fit_cfg=fit_cfg,
        curve=curve,
        restarts=restarts,
    )
    logger.info("Fitting %d spectra (tabulated=%s, jobs=%d)", len(spectra), curve is not None, jobs)
    return parallel_map(job, spectra, jobs=jobs)


def write_fit_results(
    fits: Sequence[TimedFit],
    truths: Sequence[Frame | None],
    path: str | os.PathLike[str],
    run_id: str | None = None,
) -> Path:
    """CSV of true bits, fitted phases, quantized bits, residual and wall-clock ms."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        if run_id:
            handle.write(f"# run_id: {run_id}\n")
        writer = csv.writer(handle)
        writer.writerow(
            ["true_bits", "phases", "bits", "scale", "offset", "residual", "iterations", "converged", "wall_ms"]
        )
        for fit, truth in zip(fits, truths):
            r = fit.result
            writer.writerow(
                [
                    "" if truth is None else str(truth),
                    ";".join(f"{p:.6f}" for p in r.phases),
                    str(r.bits),
                    f"{r.scale:.9g}",
                    f"{r.offset:.9g}",
                    f"{r.residual:.6e}",
                    r.iterations,
                    int(r.converged),
                    f"{fit.wall_ms:.3f}",
                ]
            )
    return path
