"""Four-level ladder forward model.

Maps a multi-bin microwave drive to a probe-transmission time series. The MW
envelope is frozen at every sample (quasi-static approximation) and the Lindblad
master equation is solved for its steady state, from which the probe transmission
follows as ``exp(-c Im[rho_eg])``.

Levels are ordered ``|g>, |e>, |r>, |s>`` (indices 0..3). Density matrices are
vectorised row-major, ``vec(rho)[4 i + j] = rho[i, j]``, so that
``vec(A rho B) = kron(A, B.T) vec(rho)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import casadi
import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

from .config import AtomParams, TransmissionModel
from .errors import ApproximationError, FieldError, ShapeError, SingularSystemError

if TYPE_CHECKING:
    from .codec import PhaseLabel

logger = logging.getLogger(__name__)

N_LEVELS = 4
_DIM = N_LEVELS * N_LEVELS
_TRACE_ROW = np.eye(N_LEVELS, dtype=complex).reshape(_DIM)
# Relative pivot magnitude below which the trace-constrained generator is rank deficient.
SINGULAR_RTOL = 1e-12
HERMITIAN_RTOL = 1e-6
# Warn when the smallest decay rate is below this multiple of the fastest beat.
QUASI_STATIC_MARGIN = 1.0


@dataclass(frozen=True)
class MWField:
    """Multi-bin microwave drive.

    ``offsets`` are angular frequencies relative to the carrier (rad/s),
    ``amplitudes`` are Rabi amplitudes (rad/s) and ``phases`` are radians.
    """

    offsets: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    reference_index: int
    carrier_hz: float = 17.62e9

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64).ravel()
        amplitudes = np.asarray(self.amplitudes, dtype=np.float64).ravel()
        phases = np.asarray(self.phases, dtype=np.float64).ravel()
        if not offsets.size == amplitudes.size == phases.size:
            raise FieldError(
                "offsets, amplitudes and phases must have equal length, got "
                f"{offsets.size}, {amplitudes.size}, {phases.size}"
            )
        if offsets.size < 2:
            raise FieldError(f"An MWField needs at least 2 bins, got {offsets.size}")
        if np.unique(offsets).size != offsets.size:
            raise FieldError(f"Bin offsets must be pairwise distinct: {offsets}")
        if np.any(~np.isfinite(amplitudes)) or np.any(amplitudes <= 0):
            raise FieldError(f"Bin amplitudes must be positive: {amplitudes}")
        if not 0 <= self.reference_index < offsets.size:
            raise FieldError(f"reference_index {self.reference_index} out of range")
        if phases[self.reference_index] != 0.0:
            raise FieldError("The reference bin must carry phase 0")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "amplitudes", amplitudes)
        object.__setattr__(self, "phases", phases)

    @classmethod
    def from_bins(
        cls,
        bins: list[tuple[float, float, float]],
        reference_index: int,
        carrier_hz: float = 17.62e9,
    ) -> MWField:
        """Build from ``(offset, amplitude, phase)`` triples."""
        offsets, amplitudes, phases = zip(*bins)
        return cls(np.array(offsets), np.array(amplitudes), np.array(phases), reference_index, carrier_hz)

    @property
    def n_bins(self) -> int:
        return self.offsets.size


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.shape != (N_LEVELS, N_LEVELS):
            raise ShapeError(f"Density matrix must be 4x4, got {entries.shape}")
        object.__setattr__(self, "entries", entries)

    @property
    def rho_eg(self) -> complex:
        return complex(self.entries[1, 0])

    @property
    def populations(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def is_physical(self, herm_tol: float = 1e-10, eig_tol: float = 1e-8) -> bool:
        """Hermitian, unit trace and positive semidefinite within tolerance."""
        rho = self.entries
        if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
            return False
        if abs(np.trace(rho) - 1.0) > herm_tol:
            return False
        eigenvalues = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        return bool(eigenvalues.min() >= -eig_tol)


@dataclass
class Spectrum:
    """Probe transmission time series with sample period ``dt`` (s)."""

    samples: np.ndarray
    dt: float
    label: PhaseLabel | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size < 1:
            raise ShapeError("A spectrum needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("Spectrum samples must be finite")
        if not self.dt > 0:
            raise ValueError(f"Sample period must be positive, got {self.dt}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt


# ---------------------------------------------------------------------------
# Envelope


def beat_envelope(amplitudes, offsets, phases, t) -> np.ndarray:
    """``sqrt(E1^2 + E2^2)`` for raw bin components, evaluated at times ``t``."""
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    arg = np.multiply.outer(t, offsets) + phases
    e1 = np.sin(arg) @ amplitudes
    e2 = np.cos(arg) @ amplitudes
    return np.hypot(e1, e2)


def rabi_envelope(field: MWField, t):
    """Rabi envelope of the multi-bin drive at time(s) ``t`` (rad/s)."""
    envelope = beat_envelope(field.amplitudes, field.offsets, field.phases, t)
    return float(envelope) if envelope.ndim == 0 else envelope


def envelope_approx(field: MWField, t):
    """Linearised envelope valid when the reference bin dominates.

    ``A_ref + sum_i A_i cos[(w_ref - w_i) t + (phi_ref - phi_i)]``
    """
    ref = field.reference_index
    others = np.arange(field.n_bins) != ref
    a_ref = field.amplitudes[ref]
    if a_ref <= field.amplitudes[others].max():
        raise ApproximationError(
            f"Reference amplitude {a_ref:g} must exceed every other bin amplitude"
        )
    t = np.asarray(t, dtype=np.float64)
    arg = np.multiply.outer(t, field.offsets[ref] - field.offsets[others]) + (
        field.phases[ref] - field.phases[others]
    )
    approx = a_ref + np.cos(arg) @ field.amplitudes[others]
    return float(approx) if approx.ndim == 0 else approx


def approximation_error(field: MWField, t) -> float:
    """Maximum relative deviation of ``envelope_approx`` from ``rabi_envelope`` on ``t``."""
    exact = rabi_envelope(field, t)
    approx = envelope_approx(field, t)
    return float(np.max(np.abs(approx - exact) / exact))


def quasi_static_margin(field: MWField, params: AtomParams) -> float:
    """Smallest nonzero decay rate over the fastest pairwise beat frequency."""
    beats = np.abs(np.subtract.outer(field.offsets, field.offsets))
    fastest = beats.max()
    rates = [g for g in (params.gamma_e, params.gamma_r, params.gamma_s) if g > 0]
    if not rates:
        return 0.0
    return min(rates) / fastest


# ---------------------------------------------------------------------------
# Master equation


def build_hamiltonian(params: AtomParams, omega_s: float) -> np.ndarray:
    """Rotating-frame Hamiltonian in units of hbar, with the MW Rabi frequency frozen."""
    if omega_s < 0:
        raise ValueError(f"omega_s must be non-negative, got {omega_s}")
    half_p = -0.5 * params.omega_p
    half_c = -0.5 * params.omega_c
    half_s = -0.5 * omega_s
    d_e = params.delta_p
    d_r = params.delta_c + params.delta_p
    d_s = params.delta_c + params.delta_p + params.delta_s
    return np.array(
        [
            [0.0, half_p, 0.0, 0.0],
            [half_p, d_e, half_c, 0.0],
            [0.0, half_c, d_r, half_s],
            [0.0, 0.0, half_s, d_s],
        ],
        dtype=np.complex128,
    )


def collapse_operators(params: AtomParams) -> list[np.ndarray]:
    """Decay channels |e>->|g>, |r>->|e>, |s>->|r>."""
    ops = []
    for (lower, upper), rate in zip(
        ((0, 1), (1, 2), (2, 3)), (params.gamma_e, params.gamma_r, params.gamma_s)
    ):
        op = np.zeros((N_LEVELS, N_LEVELS), dtype=np.complex128)
        op[lower, upper] = math.sqrt(rate)
        ops.append(op)
    return ops


def _dissipator(params: AtomParams) -> np.ndarray:
    eye = np.eye(N_LEVELS)
    out = np.zeros((_DIM, _DIM), dtype=np.complex128)
    for op in collapse_operators(params):
        decay = op.conj().T @ op
        out += np.kron(op, op.conj()) - 0.5 * (np.kron(decay, eye) + np.kron(eye, decay.T))
    return out


def _coherent(hamiltonian: np.ndarray) -> np.ndarray:
    eye = np.eye(N_LEVELS)
    return -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))


def liouvillian(params: AtomParams, omega_s: float) -> np.ndarray:
    """16x16 generator with ``d vec(rho)/dt = liouvillian @ vec(rho)`` (rad/s)."""
    return _coherent(build_hamiltonian(params, omega_s)) + _dissipator(params)


def master_equation_rhs(params: AtomParams, omega_s: float, rho: np.ndarray) -> np.ndarray:
    """``-i[H, rho] + L(rho)`` in matrix form."""
    rho = np.asarray(rho, dtype=np.complex128)
    hamiltonian = build_hamiltonian(params, omega_s)
    out = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for op in collapse_operators(params):
        decay = op.conj().T @ op
        out += op @ rho @ op.conj().T - 0.5 * (decay @ rho + rho @ decay)
    return out


def generator_residual(params: AtomParams, omega_s: float, rho: DensityMatrix | np.ndarray) -> float:
    """Frobenius norm of ``d rho/dt`` in units of the fastest rate of the problem."""
    entries = rho.entries if isinstance(rho, DensityMatrix) else rho
    rhs = master_equation_rhs(params, omega_s, entries)
    return float(np.linalg.norm(rhs) / params.rate_scale(omega_s))


def _constrained_generators(params: AtomParams, omega_s: np.ndarray, scale: float) -> np.ndarray:
    """Stack of scaled generators with the rho_gg row replaced by the trace constraint."""
    base = liouvillian(params, 0.0) / scale
    drive = (liouvillian(params, 1.0) - liouvillian(params, 0.0)) / scale
    stack = base[None, :, :] + omega_s[:, None, None] * drive[None, :, :]
    stack[:, 0, :] = _TRACE_ROW
    return stack


def _unit_rhs() -> np.ndarray:
    rhs = np.zeros(_DIM, dtype=np.complex128)
    rhs[0] = 1.0
    return rhs


def _check_pivots(lu: np.ndarray, params: AtomParams, omega_s: float):
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= SINGULAR_RTOL * pivots.max():
        raise SingularSystemError(
            f"Steady state is not unique for omega_s={omega_s:g} and {params!r}: "
            f"pivot ratio {pivots.min() / pivots.max():.3e}"
        )


def _hermitian_part(rho: np.ndarray, params: AtomParams) -> np.ndarray:
    """Symmetrise solves whose anti-Hermitian part is round-off."""
    adjoint = np.conj(np.swapaxes(rho, -1, -2))
    skew = np.abs(rho - adjoint).max(initial=0.0)
    if skew > HERMITIAN_RTOL * max(np.abs(rho).max(initial=0.0), 1.0):
        raise SingularSystemError(f"Steady-state solve is not Hermitian (skew {skew:.3e}) for {params!r}")
    return 0.5 * (rho + adjoint)


def steady_state(params: AtomParams, omega_s: float) -> DensityMatrix:
    """Steady state of the master equation by LU with partial pivoting."""
    if omega_s < 0:
        raise ValueError(f"omega_s must be non-negative, got {omega_s}")
    scale = params.rate_scale(omega_s)
    system = _constrained_generators(params, np.array([omega_s]), scale)[0]
    lu, piv = scipy.linalg.lu_factor(system)
    _check_pivots(lu, params, omega_s)
    vec = scipy.linalg.lu_solve((lu, piv), _unit_rhs())
    return DensityMatrix(_hermitian_part(vec.reshape(N_LEVELS, N_LEVELS), params))


def steady_states(params: AtomParams, omega_s: np.ndarray) -> np.ndarray:
    """Batched steady states, shape ``(len(omega_s), 4, 4)``.

    Rank deficiency is checked by LU at the extremes of ``omega_s``; the generator is
    affine in ``omega_s`` so interior values share their structure.
    """
    omega_s = np.asarray(omega_s, dtype=np.float64).ravel()
    if omega_s.size == 0:
        return np.zeros((0, N_LEVELS, N_LEVELS), dtype=np.complex128)
    if omega_s.min() < 0:
        raise ValueError("omega_s must be non-negative")
    scale = params.rate_scale(float(omega_s.max()))
    stack = _constrained_generators(params, omega_s, scale)
    for index in {int(omega_s.argmin()), int(omega_s.argmax())}:
        lu, _ = scipy.linalg.lu_factor(stack[index])
        _check_pivots(lu, params, float(omega_s[index]))
    try:
        vecs = np.linalg.solve(stack, np.broadcast_to(_unit_rhs(), (omega_s.size, _DIM))[..., None])
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"Steady-state solve failed for {params!r}") from exc
    return _hermitian_part(vecs[..., 0].reshape(-1, N_LEVELS, N_LEVELS), params)


def transmission_point(rho: DensityMatrix, model: TransmissionModel) -> float:
    """Probe transmission ``exp(-c Im[rho_eg])``."""
    return math.exp(-model.contrast * rho.rho_eg.imag)


def transmission_series(params: AtomParams, model: TransmissionModel, omega_s) -> np.ndarray:
    """Transmission for every envelope value in ``omega_s``."""
    rho = steady_states(params, omega_s)
    return np.exp(-model.contrast * rho[:, 1, 0].imag)


@dataclass(frozen=True)
class TransmissionCurve:
    """Transmission against MW Rabi frequency, tabulated and spline-interpolated."""

    omega_grid: np.ndarray
    values: np.ndarray

    @classmethod
    def build(
        cls,
        params: AtomParams,
        model: TransmissionModel,
        omega_max: float,
        points: int = 2048,
    ) -> TransmissionCurve:
        grid = np.linspace(0.0, omega_max, points)
        return cls(grid, transmission_series(params, model, grid))

    def __call__(self, omega_s) -> np.ndarray:
        omega_s = np.asarray(omega_s, dtype=np.float64)
        if omega_s.size and omega_s.max() > self.omega_grid[-1] * (1 + 1e-12):
            raise ValueError(
                f"omega_s {omega_s.max():g} exceeds tabulated range {self.omega_grid[-1]:g}"
            )
        return self._spline(omega_s)

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.omega_grid, self.values)


def simulate_spectrum(
    field: MWField,
    params: AtomParams,
    model: TransmissionModel,
    n: int,
    dt: float,
    curve: TransmissionCurve | None = None,
    label: PhaseLabel | None = None,
) -> Spectrum:
    """Quasi-static probe transmission sampled at ``t_i = i dt``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    margin = quasi_static_margin(field, params)
    if margin < QUASI_STATIC_MARGIN:
        logger.warning(
            "Quasi-static margin %.3g < %.3g: beat frequencies approach the decay rates",
            margin,
            QUASI_STATIC_MARGIN,
        )
    envelope = rabi_envelope(field, np.arange(n) * dt)
    if curve is not None:
        samples = curve(envelope)
    else:
        samples = transmission_series(params, model, envelope)
    return Spectrum(samples, dt, label)


def probe_spectrum(
    params: AtomParams, model: TransmissionModel, delta_p_grid, omega_s: float = 0.0
) -> np.ndarray:
    """Transmission against probe detuning (the EIT window) at fixed ``omega_s``."""
    out = []
    for delta_p in np.asarray(delta_p_grid, dtype=np.float64):
        detuned = params.model_copy(update={"delta_p": float(delta_p)})
        out.append(transmission_point(steady_state(detuned, omega_s), model))
    return np.array(out)


# ---------------------------------------------------------------------------
# Time-integration oracle


def integrate_master_equation(
    params: AtomParams,
    omega_s: float,
    t_end: float | None = None,
    step: float | None = None,
    rho0: np.ndarray | None = None,
    chunk: int = 20000,
) -> DensityMatrix:
    """Integrate the master equation with fixed-step classical RK4.

    Defaults integrate from the ground state to ``50 / min(Gamma)`` with a step of
    ``0.01 / max rate``. The right-hand side is a casadi expression and the RK4 step is
    marched in compiled chunks with ``mapaccum``.
    """
    scale = params.rate_scale(omega_s)
    if t_end is None:
        rates = [g for g in (params.gamma_e, params.gamma_r, params.gamma_s) if g > 0]
        if not rates:
            raise SingularSystemError("No decay channel: the master equation never settles")
        t_end = 50.0 / min(rates)
    if step is None:
        step = 0.01 / scale
    n_steps = max(1, math.ceil(t_end / step))
    h = t_end / n_steps * scale

    generator = liouvillian(params, omega_s) / scale
    real_form = np.block([[generator.real, -generator.imag], [generator.imag, generator.real]])
    x = casadi.MX.sym("x", 2 * _DIM)
    a = casadi.DM(real_form)
    rhs = casadi.Function("lindblad_rhs", [x], [casadi.mtimes(a, x)])
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    rk4 = casadi.Function("rk4_step", [x], [x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)])

    if rho0 is None:
        rho0 = np.zeros((N_LEVELS, N_LEVELS), dtype=np.complex128)
        rho0[0, 0] = 1.0
    vec = np.asarray(rho0, dtype=np.complex128).reshape(_DIM)
    state = casadi.DM(np.concatenate([vec.real, vec.imag]))

    logger.debug("RK4 oracle: %d steps of %.3e s", n_steps, t_end / n_steps)
    full, remainder = divmod(n_steps, chunk)
    if full:
        march = rk4.mapaccum("rk4_march", chunk)
        for _ in range(full):
            state = march(state)[:, -1]
    if remainder:
        state = rk4.mapaccum("rk4_tail", remainder)(state)[:, -1]

    flat = np.asarray(state).ravel()
    rho = (flat[:_DIM] + 1j * flat[_DIM:]).reshape(N_LEVELS, N_LEVELS)
    return DensityMatrix(rho)
