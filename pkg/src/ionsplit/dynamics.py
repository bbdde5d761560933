"""
Classical two-ion dynamics through a separation waveform.

Integrates both ions in the time-dependent Taylor potential plus their Coulomb
repulsion, converts the residual motion into phonon numbers and classifies which
wells the ions end up in.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate as sp_integrate
from scipy import linalg, stats

from ionsplit.calibrate import HeatingModel
from ionsplit.constants import ION_MASSES_U, PhysicalConstants
from ionsplit.errors import (
    ClassificationError,
    DomainError,
    EscapeError,
    IonsplitError,
    RangeError,
    TimestepError,
    UsageError,
    format_error,
)
from ionsplit.hardware import AwgSpec, ContinuousVoltage, FilterSpec, apply_filter, quantize
from ionsplit.logging_config import log_operation
from ionsplit.rampgen import (
    RampConfig,
    RampMesh,
    TrajectorySpec,
    Waveform,
    build_waveform,
    frequency_trace,
)
from ionsplit.trapmodel import (
    DEFAULT_VALIDITY_RADIUS,
    AxialPotential,
    EquilibriumConfig,
    SegmentBasis,
    barrier_position,
    coefficients_from_voltages,
    equilibrium_two_ion,
    total_energy,
    total_hessian,
)

logger = logging.getLogger(__name__)

SCAN_AXES = ("T", "dU_O", "dU_C_cp")
INTEGRATORS = ("verlet", "dop853")


class Classification(str, Enum):
    SEPARATED = "Separated"
    BOTH_LEFT = "BothInLeftWell"
    BOTH_RIGHT = "BothInRightWell"
    FAILED = "Failed"


@dataclass(frozen=True)
class SimConfig:
    """
    Integration settings.

    Attributes:
        timestep: Fixed step [s]
        integrator: "verlet" (symplectic) or "dop853"
        omega_ref: Reference frequency for phonon units [rad/s]
        settle_time: Time the final voltages are held after the ramp [s]
        tail_periods: Local oscillation periods averaged for energy extraction
        oversample: Filter steps per waveform sample
        escape_factor: Abort once |x| exceeds this multiple of the validity radius
        validity_radius: Taylor-model validity radius [m]
    """

    timestep: float = 1e-9
    integrator: str = "verlet"
    omega_ref: float = 2.0 * math.pi * 1.4e6
    settle_time: float = 20e-6
    tail_periods: float = 5.0
    oversample: int = 20
    escape_factor: float = 3.0
    validity_radius: float = DEFAULT_VALIDITY_RADIUS

    def __post_init__(self) -> None:
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if not self.omega_ref > 0:
            raise ValueError("omega_ref must be positive")
        if self.tail_periods <= 0 or self.settle_time < 0:
            raise ValueError("tail_periods must be positive and settle_time non-negative")


@dataclass(frozen=True)
class IonState:
    """Positions [m] and velocities [m/s] of both ions at a time [s]."""

    x1: float
    x2: float
    v1: float = 0.0
    v2: float = 0.0
    time: float = 0.0

    def __post_init__(self) -> None:
        if not self.x1 < self.x2:
            raise ValueError("Ion order violated: require x1 < x2")

    def reversed_velocities(self, time: float = 0.0) -> "IonState":
        return IonState(self.x1, self.x2, -self.v1, -self.v2, time)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Integrated motion on a uniform time grid."""

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> IonState:
        return IonState(
            float(self.x1[-1]),
            float(self.x2[-1]),
            float(self.v1[-1]),
            float(self.v2[-1]),
            float(self.times[-1]),
        )

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def tail(self, duration: float) -> "Trajectory":
        start = int(np.searchsorted(self.times, self.times[-1] - duration, side="left"))
        return self._slice(slice(start, None))

    def decimated(self, stride: int) -> "Trajectory":
        return self._slice(slice(None, None, max(1, stride)))

    def _slice(self, s: slice) -> "Trajectory":
        return Trajectory(self.times[s], self.x1[s], self.x2[s], self.v1[s], self.v2[s])


@dataclass(frozen=True)
class SeparationOutcome:
    """Final well membership and per-ion coherent excitation."""

    classification: Classification
    n_coh: Tuple[float, float]
    well_positions: Tuple[float, float]

    def __post_init__(self) -> None:
        if min(self.n_coh) < 0:
            raise ValueError("n_coh must be non-negative")

    @property
    def separated(self) -> bool:
        return self.classification is Classification.SEPARATED

    def to_dict(self) -> Dict[str, object]:
        return {
            "classification": self.classification.value,
            "n_coh": list(self.n_coh),
            "well_positions_m": list(self.well_positions),
        }


@dataclass(frozen=True)
class ThermalBudget:
    """Coherent and heating contributions to the final excitation."""

    n_coh: Tuple[float, float]
    n_thermal: float

    @property
    def n_tot(self) -> Tuple[float, float]:
        return (self.n_coh[0] + self.n_thermal, self.n_coh[1] + self.n_thermal)


@dataclass(frozen=True)
class SeparationDesign:
    """Everything needed to build, distort and simulate one separation."""

    trajectory: TrajectorySpec
    mesh: RampMesh
    ramp: RampConfig
    basis: SegmentBasis
    constants: PhysicalConstants
    awg: Optional[AwgSpec] = AwgSpec()
    filter: Optional[FilterSpec] = FilterSpec()

    def with_axis(self, axis: str, value: float) -> "SeparationDesign":
        if axis == "T":
            return replace(self, trajectory=replace(self.trajectory, T=value))
        if axis == "dU_O":
            return replace(self, ramp=replace(self.ramp, dU_O=value))
        if axis == "dU_C_cp":
            return replace(self, ramp=replace(self.ramp, dU_C_cp=value))
        raise UsageError(message=f"Unknown scan axis {axis!r}", details={"axes": SCAN_AXES})


@dataclass(frozen=True, eq=False)
class SeparationRun:
    waveform: Waveform
    voltages: ContinuousVoltage
    trajectory: Trajectory
    outcome: SeparationOutcome
    ramp_duration: float


@dataclass(frozen=True)
class ExponentialFit:
    """n(T) = amplitude * exp(-T / tau)."""

    amplitude: float
    tau: float
    r_squared: float
    n_points: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "amplitude": self.amplitude,
            "tau_s": self.tau,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class ScanPoint:
    value: float
    outcome: Optional[SeparationOutcome]
    n_thermal: Optional[float] = None
    error: Optional[Dict[str, object]] = None

    @property
    def classification(self) -> Classification:
        return self.outcome.classification if self.outcome else Classification.FAILED

    @property
    def mean_n_coh(self) -> Optional[float]:
        return None if self.outcome is None else 0.5 * sum(self.outcome.n_coh)


@dataclass(frozen=True)
class ScanResult:
    axis: str
    points: Tuple[ScanPoint, ...]
    fit: Optional[ExponentialFit] = None

    @property
    def grid(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    def classifications(self) -> List[Classification]:
        return [p.classification for p in self.points]


def _accelerations(
    x1: float, x2: float, alpha: float, beta: float, gamma: float, qm: float, coulomb: float
) -> Tuple[float, float]:
    d = x2 - x1
    push = coulomb / (d * d)
    a1 = -qm * (4.0 * beta * x1 * x1 * x1 + 2.0 * alpha * x1 + gamma) - push
    a2 = -qm * (4.0 * beta * x2 * x2 * x2 + 2.0 * alpha * x2 + gamma) + push
    return a1, a2


def max_secular_frequency(
    potential: AxialPotential, x1: float, x2: float, c: PhysicalConstants
) -> float:
    """Largest normal-mode frequency at the given positions [Hz]."""
    eigenvalues = linalg.eigvalsh(total_hessian(potential, x1, x2, c) / c.ion_mass)
    return math.sqrt(max(float(eigenvalues[-1]), 0.0)) / (2.0 * math.pi)


def mechanical_energy(state: IonState, potential: AxialPotential, c: PhysicalConstants) -> float:
    """Kinetic plus potential energy of the pair [J]."""
    kinetic = 0.5 * c.ion_mass * (state.v1**2 + state.v2**2)
    return kinetic + total_energy(potential, state.x1, state.x2, c)


def _check_timestep(
    cv: ContinuousVoltage, basis: SegmentBasis, init: IonState, cfg: SimConfig, c: PhysicalConstants
) -> None:
    potential = coefficients_from_voltages(basis, cv(init.time))
    f_max = max_secular_frequency(potential, init.x1, init.x2, c)
    if f_max > 0 and cfg.timestep > 1.0 / (50.0 * f_max):
        raise TimestepError(
            message=(
                f"Timestep {cfg.timestep:.3g} s too coarse for {f_max / 1e6:.3f} MHz motion; "
                f"need <= {1.0 / (50.0 * f_max):.3g} s"
            ),
            details={"timestep": cfg.timestep, "max_frequency_Hz": f_max},
        )


def _escape(x: float, limit: float, t: float) -> EscapeError:
    return EscapeError(
        message=f"Ion left the trap region (|x|={abs(x):.3e} m) at t={t:.3e} s",
        details={"x": x, "limit": limit, "time": t},
    )


def integrate(
    cv: ContinuousVoltage,
    basis: SegmentBasis,
    init: IonState,
    cfg: SimConfig,
    c: PhysicalConstants,
    t_end: Optional[float] = None,
) -> Trajectory:
    """
    Integrate m x_i'' = -q dV/dx(x_i, t) + q kappa (x_i - x_j) / |x_i - x_j|^3.

    Args:
        cv: Segment voltages versus time
        basis: Segment basis
        init: Initial positions and velocities
        cfg: Timestep and integrator
        c: Physical constants
        t_end: Final time (defaults to the end of cv)

    Returns:
        Trajectory on the grid init.time + k * timestep

    Raises:
        TimestepError: Timestep too coarse or non-finite state
        EscapeError: An ion left escape_factor * validity_radius
    """
    _check_timestep(cv, basis, init, cfg, c)
    t_end = float(cv.times[-1]) if t_end is None else t_end
    n_steps = int(math.floor((t_end - init.time) / cfg.timestep + 1e-9))
    if n_steps < 1:
        raise RangeError(message="Integration window shorter than one timestep")
    times = init.time + np.arange(n_steps + 1) * cfg.timestep
    if cfg.integrator == "dop853":
        return _integrate_dop853(cv, basis, init, cfg, c, times)

    alpha, beta, gamma = cv.coefficients(basis, times)
    alpha, beta, gamma = alpha.tolist(), beta.tolist(), gamma.tolist()
    qm = c.charge_to_mass
    coulomb = qm * c.coulomb_factor
    dt = cfg.timestep
    half = 0.5 * dt
    limit = cfg.escape_factor * cfg.validity_radius

    x1 = np.empty(n_steps + 1)
    x2 = np.empty(n_steps + 1)
    v1 = np.empty(n_steps + 1)
    v2 = np.empty(n_steps + 1)
    p1, p2, u1, u2 = init.x1, init.x2, init.v1, init.v2
    x1[0], x2[0], v1[0], v2[0] = p1, p2, u1, u2
    a1, a2 = _accelerations(p1, p2, alpha[0], beta[0], gamma[0], qm, coulomb)

    for k in range(1, n_steps + 1):
        u1 += half * a1
        u2 += half * a2
        p1 += dt * u1
        p2 += dt * u2
        if not (abs(p1) <= limit and abs(p2) <= limit):
            if math.isnan(p1) or math.isnan(p2):
                raise TimestepError(
                    message=f"Non-finite ion position at t={times[k]:.3e} s",
                    details={"step": k},
                )
            raise _escape(p1 if abs(p1) > limit else p2, limit, float(times[k]))
        if p2 <= p1:
            raise TimestepError(
                message=f"Ions crossed at t={times[k]:.3e} s; timestep too coarse",
                details={"step": k},
            )
        a1, a2 = _accelerations(p1, p2, alpha[k], beta[k], gamma[k], qm, coulomb)
        u1 += half * a1
        u2 += half * a2
        x1[k], x2[k], v1[k], v2[k] = p1, p2, u1, u2

    return Trajectory(times, x1, x2, v1, v2)


def _integrate_dop853(
    cv: ContinuousVoltage,
    basis: SegmentBasis,
    init: IonState,
    cfg: SimConfig,
    c: PhysicalConstants,
    times: np.ndarray,
) -> Trajectory:
    qm = c.charge_to_mass
    coulomb = qm * c.coulomb_factor
    limit = cfg.escape_factor * cfg.validity_radius

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        p = coefficients_from_voltages(basis, cv(t))
        a1, a2 = _accelerations(y[0], y[1], p.alpha, p.beta, p.gamma, qm, coulomb)
        return np.array([y[2], y[3], a1, a2])

    def escaped(t: float, y: np.ndarray) -> float:
        return limit - max(abs(y[0]), abs(y[1]))

    escaped.terminal = True  # type: ignore[attr-defined]
    solution = sp_integrate.solve_ivp(
        rhs,
        (times[0], times[-1]),
        [init.x1, init.x2, init.v1, init.v2],
        method="DOP853",
        t_eval=times,
        rtol=1e-10,
        atol=[1e-16, 1e-16, 1e-10, 1e-10],
        max_step=20 * cfg.timestep,
        events=escaped,
    )
    if solution.status == 1:
        t_hit = float(solution.t_events[0][0])
        y_hit = solution.y_events[0][0]
        raise _escape(float(max(y_hit[:2], key=abs)), limit, t_hit)
    if not solution.success:
        raise TimestepError(message=f"DOP853 integration failed: {solution.message}")
    y = solution.y
    return Trajectory(solution.t, y[0], y[1], y[2], y[3])


def local_well_frequencies(
    potential: AxialPotential, eq: EquilibriumConfig, c: PhysicalConstants
) -> Tuple[float, float]:
    """Per-ion local oscillation frequencies from the Hessian diagonal [rad/s]."""
    hessian = total_hessian(potential, eq.x1, eq.x2, c) / c.ion_mass
    if hessian[0, 0] <= 0 or hessian[1, 1] <= 0:
        raise ClassificationError(
            message="An ion does not sit in a confining well",
            details={"curvatures": [float(hessian[0, 0]), float(hessian[1, 1])]},
        )
    return math.sqrt(hessian[0, 0]), math.sqrt(hessian[1, 1])


def _classify(x1: np.ndarray, x2: np.ndarray, barrier: Optional[float]) -> Classification:
    if barrier is None:
        raise ClassificationError(message="Final potential is not a double well")
    sides = []
    for positions in (x1, x2):
        if np.all(positions < barrier):
            sides.append("L")
        elif np.all(positions > barrier):
            sides.append("R")
        else:
            raise ClassificationError(
                message="Ion crosses the barrier during the tail window",
                details={"barrier": barrier},
            )
    if sides == ["L", "R"]:
        return Classification.SEPARATED
    if sides == ["L", "L"]:
        return Classification.BOTH_LEFT
    return Classification.BOTH_RIGHT


def extract_excitation(
    trajectory: Trajectory,
    final_potential: AxialPotential,
    cfg: SimConfig,
    c: PhysicalConstants,
) -> SeparationOutcome:
    """
    Residual oscillation energy per ion, averaged over the final tail_periods periods.

    E = m v^2 / 2 + m w_loc^2 (x - x_eq)^2 / 2 and n_coh = E / (hbar omega_ref).

    Raises:
        ClassificationError: No double well, or an ion astride the barrier
        RangeError: Trajectory shorter than the tail window
    """
    barrier = barrier_position(final_potential)
    seed_window = trajectory.tail(min(trajectory.duration, 1e-6))
    seed = (float(np.mean(seed_window.x1)), float(np.mean(seed_window.x2)))
    eq = equilibrium_two_ion(final_potential, c, validity_radius=None, seed=seed)
    omegas = local_well_frequencies(final_potential, eq, c)
    window = cfg.tail_periods * 2.0 * math.pi / min(omegas)
    if window > trajectory.duration * (1 + 1e-9):
        raise RangeError(
            message=f"Tail window {window:.3e} s exceeds the trajectory length",
            details={"window": window, "duration": trajectory.duration},
        )
    tail = trajectory.tail(window)
    classification = _classify(tail.x1, tail.x2, barrier)

    m = c.ion_mass
    n_coh = []
    ions = ((tail.x1, tail.v1, eq.x1, omegas[0]), (tail.x2, tail.v2, eq.x2, omegas[1]))
    for x, v, x_eq, w in ions:
        energy = 0.5 * m * (v * v + w * w * (x - x_eq) ** 2)
        n_coh.append(float(np.mean(energy)) / (c.reduced_planck * cfg.omega_ref))
    return SeparationOutcome(
        classification=classification,
        n_coh=(n_coh[0], n_coh[1]),
        well_positions=(eq.x1, eq.x2),
    )


def initial_state(
    cv: ContinuousVoltage, basis: SegmentBasis, c: PhysicalConstants
) -> IonState:
    """Ions at rest at the equilibrium of the first voltage set."""
    eq = equilibrium_two_ion(coefficients_from_voltages(basis, cv(cv.start)), c)
    return IonState(eq.x1, eq.x2, 0.0, 0.0, cv.start)


def sample_thermal_initial(
    potential: AxialPotential,
    eq: EquilibriumConfig,
    c: PhysicalConstants,
    rng: np.random.Generator,
    n_bar: float = 0.7,
) -> IonState:
    """
    Gaussian phase-space draw of a thermal state with n_bar phonons per normal mode.
    """
    eigenvalues, vectors = linalg.eigh(total_hessian(potential, eq.x1, eq.x2, c) / c.ion_mass)
    if eigenvalues[0] <= 0:
        raise DomainError(message="Thermal sampling needs a stable configuration")
    hbar, m = c.reduced_planck, c.ion_mass
    positions = np.array([eq.x1, eq.x2])
    velocities = np.zeros(2)
    for w2, mode in zip(eigenvalues, vectors.T):
        w = math.sqrt(w2)
        spread = 2.0 * n_bar + 1.0
        positions += mode * rng.normal(0.0, math.sqrt(hbar * spread / (2.0 * m * w)))
        velocities += mode * rng.normal(0.0, math.sqrt(hbar * w * spread / (2.0 * m)))
    return IonState(positions[0], positions[1], velocities[0], velocities[1])


def prepare_voltages(
    design: SeparationDesign, cfg: SimConfig
) -> Tuple[Waveform, ContinuousVoltage]:
    """Design, quantize and filter the waveform, holding the last sample for settle_time."""
    waveform = build_waveform(
        design.trajectory, design.mesh, design.ramp, design.basis, design.constants
    )
    if design.awg is not None:
        waveform = quantize(waveform, design.awg)
    if design.filter is not None:
        cv = apply_filter(waveform, design.filter, cfg.oversample, hold_after=cfg.settle_time)
    else:
        cv = ContinuousVoltage.from_waveform(waveform, hold_after=cfg.settle_time)
    return waveform, cv


def run_separation(design: SeparationDesign, cfg: SimConfig) -> SeparationRun:
    """Full pipeline: design, hardware distortion, integration and extraction."""
    c = design.constants
    waveform, cv = prepare_voltages(design, cfg)
    init = initial_state(cv, design.basis, c)
    trajectory = integrate(cv, design.basis, init, cfg, c)
    final_potential = coefficients_from_voltages(design.basis, cv(float(trajectory.times[-1])))
    outcome = extract_excitation(trajectory, final_potential, cfg, c)
    logger.info(
        "T=%.1f us dU_O=%.2f mV dU_C_cp=%.1f mV -> %s, n_coh=(%.3g, %.3g)",
        design.trajectory.T * 1e6,
        design.ramp.dU_O * 1e3,
        design.ramp.dU_C_cp * 1e3,
        outcome.classification.value,
        outcome.n_coh[0],
        outcome.n_coh[1],
    )
    return SeparationRun(waveform, cv, trajectory, outcome, waveform.duration)


def quasistatic_outcome(
    design: SeparationDesign, substeps: int = 4
) -> SeparationOutcome:
    """
    Follow the two-ion equilibrium branch through the unfiltered waveform.

    This is the infinitely slow limit of the dynamics; n_coh is zero by construction.
    Coefficients are linearly interpolated with substeps nodes per sample.
    """
    c = design.constants
    waveform = build_waveform(
        design.trajectory, design.mesh, design.ramp, design.basis, design.constants
    )
    coefficients = waveform.coefficients(design.basis)
    nodes = np.arange((waveform.n_samples - 1) * substeps + 1) / substeps
    samples = np.arange(waveform.n_samples)
    alpha, beta, gamma = (np.interp(nodes, samples, values) for values in coefficients)

    seed: Optional[Tuple[float, float]] = None
    for a, b, g in zip(alpha.tolist(), beta.tolist(), gamma.tolist()):
        potential = AxialPotential(a, b, g)
        eq = equilibrium_two_ion(potential, c, validity_radius=None, seed=seed)
        seed = (eq.x1, eq.x2)
    classification = _classify(np.array([eq.x1]), np.array([eq.x2]), barrier_position(potential))
    return SeparationOutcome(
        classification=classification, n_coh=(0.0, 0.0), well_positions=(eq.x1, eq.x2)
    )


def thermal_budget(times: np.ndarray, omega: np.ndarray, heat: HeatingModel) -> float:
    """Phonons gained from anomalous heating, integral of Gamma(omega(t)) dt."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError(message="Frequency trace must be positive everywhere")
    rate_per_s = heat.rate_per_second(omega)
    return float(sp_integrate.trapezoid(rate_per_s, np.asarray(times, dtype=float)))


def total_excitation(
    outcome: SeparationOutcome, heat: HeatingModel, times: np.ndarray, omega: np.ndarray
) -> ThermalBudget:
    """Coherent part from the outcome plus the heating integral over the frequency trace."""
    return ThermalBudget(n_coh=outcome.n_coh, n_thermal=thermal_budget(times, omega, heat))


def mass_rescaled_excitation(n: float, from_species: str, to_species: str) -> float:
    """Express an excitation for another species at equal displacement, n sqrt(m_to / m_from)."""
    for species in (from_species, to_species):
        if species not in ION_MASSES_U:
            raise ValueError(f"Unknown ion species {species!r}")
    return n * math.sqrt(ION_MASSES_U[to_species] / ION_MASSES_U[from_species])


def fit_exponential(
    durations: Sequence[float], excitations: Sequence[float]
) -> ExponentialFit:
    """Log-linear fit of n(T) = A exp(-T / tau)."""
    T = np.asarray(durations, dtype=float)
    n = np.asarray(excitations, dtype=float)
    if T.size < 2:
        raise DomainError(message="Exponential fit needs at least two points")
    if np.any(n <= 0):
        raise DomainError(message="Exponential fit needs positive excitations")
    regression = stats.linregress(T, np.log(n))
    if regression.slope >= 0:
        raise DomainError(
            message="Excitation does not decrease with duration",
            details={"slope": float(regression.slope)},
        )
    return ExponentialFit(
        amplitude=float(math.exp(regression.intercept)),
        tau=float(-1.0 / regression.slope),
        r_squared=float(regression.rvalue**2),
        n_points=int(T.size),
    )


def _scan_point(
    design: SeparationDesign,
    axis: str,
    value: float,
    cfg: SimConfig,
    heat: Optional[HeatingModel],
) -> ScanPoint:
    point_design = design.with_axis(axis, value)
    try:
        run = run_separation(point_design, cfg)
        n_thermal = None
        if heat is not None:
            trace = frequency_trace(run.waveform, point_design.basis, point_design.constants)
            n_thermal = thermal_budget(trace.times, trace.omega, heat)
        return ScanPoint(value=value, outcome=run.outcome, n_thermal=n_thermal)
    except IonsplitError as exc:
        logger.warning("Scan point %s=%g failed: %s", axis, value, exc.message)
        return ScanPoint(value=value, outcome=None, error=format_error(exc))


def scan(
    axis: str,
    grid: Sequence[float],
    design: SeparationDesign,
    cfg: SimConfig,
    heat: Optional[HeatingModel] = None,
    fit_range: Optional[Tuple[float, float]] = None,
    threads: int = 1,
    evaluator: Optional[Callable[[SeparationDesign], SeparationOutcome]] = None,
) -> ScanResult:
    """
    Evaluate the separation at every grid value of one axis.

    Failing points are recorded with their error and the scan continues. For T
    scans an exponential is fitted over fit_range (default: the whole grid).

    Args:
        axis: "T", "dU_O" or "dU_C_cp"
        grid: Strictly monotone axis values (SI)
        design: Base design
        cfg: Simulation settings
        heat: Optional heating law for the thermal part
        fit_range: (T_min, T_max) of the exponential fit
        threads: Concurrent evaluations
        evaluator: Replaces the full dynamics, e.g. quasistatic_outcome

    Returns:
        ScanResult in grid order
    """
    if axis not in SCAN_AXES:
        raise UsageError(message=f"Unknown scan axis {axis!r}", details={"axes": SCAN_AXES})
    values = np.asarray(grid, dtype=float)
    if values.size == 0:
        raise UsageError(message="Scan grid is empty")
    steps = np.diff(values)
    if values.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise UsageError(message="Scan grid must be strictly monotone")

    def evaluate(value: float) -> ScanPoint:
        if evaluator is None:
            return _scan_point(design, axis, value, cfg, heat)
        try:
            return ScanPoint(value=value, outcome=evaluator(design.with_axis(axis, value)))
        except IonsplitError as exc:
            return ScanPoint(value=value, outcome=None, error=format_error(exc))

    with log_operation(logger, "scan", axis=axis, points=int(values.size)):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                points = list(pool.map(evaluate, values.tolist()))
        else:
            points = [evaluate(v) for v in values.tolist()]

    fit = None
    if axis == "T":
        lo, hi = fit_range if fit_range else (values.min(), values.max())
        selected = [
            (p.value, p.mean_n_coh)
            for p in points
            if p.outcome is not None and lo <= p.value <= hi and p.mean_n_coh > 0
        ]
        if len(selected) >= 2:
            try:
                fit = fit_exponential([s[0] for s in selected], [s[1] for s in selected])
            except DomainError as exc:
                logger.warning("Exponential fit skipped: %s", exc.message)
    return ScanResult(axis=axis, points=tuple(points), fit=fit)
