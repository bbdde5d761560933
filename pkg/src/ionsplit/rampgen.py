"""
Separation waveform design.

The chain is t -> d(t) -> alpha(d) -> {U(alpha)}: a smooth distance trajectory is
inverted into the harmonic coefficient alpha, and the segment voltages follow from
interpolating U_S and U_O in alpha between mesh anchors while U_C keeps alpha exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize

from ionsplit.constants import PhysicalConstants
from ionsplit.errors import ConvergenceError, RangeError, RateError, range_error, saturation_error
from ionsplit.trapmodel import (
    DEFAULT_VOLTAGE_RANGE,
    AxialPotential,
    SegmentBasis,
    VoltageSet,
    coefficient_arrays,
    coefficients_from_voltages,
    equilibrium_two_ion,
    local_frequency,
    symmetric_distance,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 2.5e6
DEFAULT_START_VOLTAGES = VoltageSet(U_C=-7.0, U_S=0.0, U_O=0.0)
DEFAULT_CP_VOLTAGES = (4.35, 9.0)
DEFAULT_END_VOLTAGES = (-7.83, 0.0)
CHANNELS = ("U_C", "U_S", "U_O", "dU_O")

# Relative slack when a requested distance sits just outside the mesh range.
_ENDPOINT_SLACK = 5e-3


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Distance trajectory d(t) = d_i + (d_f - d_i) (t/T_u)^2 sin^2(pi t / 2 T_u).

    Attributes:
        d_i: Initial distance [m]
        d_f: Final distance [m]
        T: Emitted ramp duration [s], after truncation
        truncate_head: Fraction of the untruncated clock dropped at the start
        truncate_tail: Fraction of the untruncated clock dropped at the end
    """

    d_i: float = 4.45e-6
    d_f: float = 400e-6
    T: float = 80e-6
    truncate_head: float = 0.10
    truncate_tail: float = 0.30

    def __post_init__(self) -> None:
        if not 0 < self.d_i < self.d_f:
            raise ValueError(f"Require 0 < d_i < d_f, got d_i={self.d_i}, d_f={self.d_f}")
        if not self.T > 0:
            raise ValueError(f"Duration must be positive, got {self.T}")
        for name in ("truncate_head", "truncate_tail"):
            value = getattr(self, name)
            if not 0 <= value < 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5), got {value}")
        if self.truncate_head + self.truncate_tail >= 1:
            raise ValueError("Truncated fractions must sum to less than 1")

    @property
    def untruncated_duration(self) -> float:
        return self.T / (1.0 - self.truncate_head - self.truncate_tail)

    def to_dict(self) -> Dict[str, float]:
        return {
            "d_i_m": self.d_i,
            "d_f_m": self.d_f,
            "T_s": self.T,
            "truncate_head": self.truncate_head,
            "truncate_tail": self.truncate_tail,
        }


@dataclass(frozen=True)
class MeshAnchor:
    """Interpolation node: alpha [V m^-2] with the U_S and U_O values [V] held there."""

    alpha: float
    U_S: float
    U_O: float


@dataclass(frozen=True)
class RampMesh:
    """
    Anchors ordered by strictly decreasing alpha, including a CP anchor at alpha = 0.
    """

    anchors: Tuple[MeshAnchor, ...]

    def __post_init__(self) -> None:
        if len(self.anchors) < 2:
            raise ValueError("A ramp mesh needs at least two anchors")
        alphas = [a.alpha for a in self.anchors]
        if any(b >= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("Mesh anchors must have strictly decreasing alpha")
        if 0.0 not in alphas:
            raise ValueError("Mesh must contain a critical-point anchor with alpha = 0")

    @property
    def alpha_start(self) -> float:
        return self.anchors[0].alpha

    @property
    def alpha_end(self) -> float:
        return self.anchors[-1].alpha

    @property
    def cp_position(self) -> int:
        return [a.alpha for a in self.anchors].index(0.0)

    @property
    def cp_anchor(self) -> MeshAnchor:
        return self.anchors[self.cp_position]

    @classmethod
    def from_voltages(
        cls,
        basis: SegmentBasis,
        start: VoltageSet = DEFAULT_START_VOLTAGES,
        cp: Tuple[float, float] = DEFAULT_CP_VOLTAGES,
        end: Tuple[float, float] = DEFAULT_END_VOLTAGES,
        alpha_end: Optional[float] = None,
        refined: bool = False,
    ) -> "RampMesh":
        """
        Build the start / CP / end mesh from physical voltage sets.

        Args:
            basis: Segment basis used to evaluate alpha at the start set
            start: Initial voltages (single harmonic well)
            cp: (U_S, U_O) at the critical point
            end: (U_S, U_O) at the end of the ramp
            alpha_end: Harmonic coefficient at the end anchor (defaults to -alpha_start)
            refined: Insert half-way anchors so U_O already sits at its CP value
                before and after the critical point

        Returns:
            RampMesh
        """
        alpha_start = coefficients_from_voltages(basis, start).alpha
        if not alpha_start > 0:
            raise range_error("alpha_start", alpha_start, 0.0, None)
        alpha_end = -alpha_start if alpha_end is None else alpha_end
        if not alpha_end < 0:
            raise range_error("alpha_end", alpha_end, None, 0.0)

        anchors = [MeshAnchor(alpha_start, start.U_S, start.U_O)]
        if refined:
            anchors.append(MeshAnchor(0.5 * alpha_start, 0.5 * (start.U_S + cp[0]), cp[1]))
        anchors.append(MeshAnchor(0.0, cp[0], cp[1]))
        if refined:
            anchors.append(MeshAnchor(0.5 * alpha_end, 0.5 * (cp[0] + end[0]), cp[1]))
        anchors.append(MeshAnchor(alpha_end, end[0], end[1]))
        return cls(anchors=tuple(anchors))

    def to_dict(self) -> Dict[str, object]:
        return {
            "anchors": [
                {"alpha_V_per_m2": a.alpha, "U_S_V": a.U_S, "U_O_V": a.U_O} for a in self.anchors
            ]
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "RampMesh":
        return cls(
            anchors=tuple(
                MeshAnchor(float(a["alpha_V_per_m2"]), float(a["U_S_V"]), float(a["U_O_V"]))
                for a in data["anchors"]  # type: ignore[union-attr]
            )
        )


@dataclass(frozen=True)
class RampConfig:
    """
    Offsets and sampling of the emitted waveform.

    Attributes:
        dU_C_cp: Extra center voltage applied around the CP [V]
        dU_O: Differential outer voltage for tilt compensation [V]
        sample_rate: Output sample rate [samples/s]
        max_sample_rate: AWG update-rate limit [samples/s]
        voltage_limit: AWG output range [V]
    """

    dU_C_cp: float = 0.0
    dU_O: float = 0.0
    sample_rate: float = DEFAULT_SAMPLE_RATE
    max_sample_rate: float = DEFAULT_SAMPLE_RATE
    voltage_limit: float = DEFAULT_VOLTAGE_RANGE

    def __post_init__(self) -> None:
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not self.voltage_limit > 0:
            raise ValueError("voltage_limit must be positive")

    def to_dict(self) -> Dict[str, float]:
        return {
            "dU_C_cp_V": self.dU_C_cp,
            "dU_O_V": self.dU_O,
            "sample_rate_Hz": self.sample_rate,
            "max_sample_rate_Hz": self.max_sample_rate,
            "voltage_limit_V": self.voltage_limit,
        }


@dataclass(frozen=True, eq=False)
class Waveform:
    """
    Sampled segment voltages held for one sample period each.

    Channels are the C voltage, the common S and O pair voltages and the O pair
    differential. Sample k is applied on [k dt, (k+1) dt).
    """

    sample_period: float
    U_C: np.ndarray
    U_S: np.ndarray
    U_O: np.ndarray
    dU_O: np.ndarray
    cp_index: Optional[int] = None
    reduced_accuracy: Optional[np.ndarray] = None
    trajectory: Optional[TrajectorySpec] = None
    is_reversed: bool = False
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        lengths = {len(getattr(self, name)) for name in CHANNELS}
        if len(lengths) != 1:
            raise ValueError("All waveform channels must have equal length")
        if lengths.pop() == 0:
            raise ValueError("Waveform is empty")
        if self.reduced_accuracy is not None and len(self.reduced_accuracy) != len(self.U_C):
            raise ValueError("reduced_accuracy mask length differs from the channels")

    @property
    def n_samples(self) -> int:
        return len(self.U_C)

    @property
    def duration(self) -> float:
        return self.n_samples * self.sample_period

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_period

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_period

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise KeyError(name)
        return getattr(self, name)

    def voltage_set(self, index: int) -> VoltageSet:
        return VoltageSet(
            U_C=float(self.U_C[index]),
            U_S=float(self.U_S[index]),
            U_O=float(self.U_O[index]),
            dU_O=float(self.dU_O[index]),
        )

    def coefficients(self, basis: SegmentBasis) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-sample (alpha, beta, gamma)."""
        return coefficient_arrays(basis, self.U_C, self.U_S, self.U_O, self.dU_O)

    def with_channels(self, **channels: np.ndarray) -> "Waveform":
        return replace(self, **channels)

    def equals(self, other: "Waveform") -> bool:
        """Sample-exact comparison of channels and annotations."""
        if self.n_samples != other.n_samples or self.sample_period != other.sample_period:
            return False
        if self.cp_index != other.cp_index or self.is_reversed != other.is_reversed:
            return False
        return all(np.array_equal(self.channel(n), other.channel(n)) for n in CHANNELS)

    def annotations(self) -> Dict[str, object]:
        return {
            "n_samples": self.n_samples,
            "sample_period_s": self.sample_period,
            "duration_s": self.duration,
            "cp_index": self.cp_index,
            "reversed": self.is_reversed,
            "reduced_accuracy_from": _first_true(self.reduced_accuracy),
            "trajectory": self.trajectory.to_dict() if self.trajectory else None,
            **self.metadata,
        }


@dataclass(frozen=True)
class FrequencyTrace:
    """Local COM frequency per waveform sample."""

    times: np.ndarray
    omega: np.ndarray
    distance: np.ndarray
    reduced_accuracy: np.ndarray

    @property
    def minimum_index(self) -> int:
        return int(np.argmin(self.omega))


def _first_true(mask: Optional[np.ndarray]) -> Optional[int]:
    if mask is None or not np.any(mask):
        return None
    return int(np.argmax(mask))


def distance_untruncated(spec: TrajectorySpec, t: float) -> float:
    """
    Evaluate the smooth trajectory on the untruncated clock, t in [0, T_u].
    """
    duration = spec.untruncated_duration
    if not -1e-15 * duration <= t <= duration * (1 + 1e-15):
        raise range_error("t", t, 0.0, duration)
    u = min(max(t / duration, 0.0), 1.0)
    return spec.d_i + (spec.d_f - spec.d_i) * u * u * math.sin(0.5 * math.pi * u) ** 2


def distance_at(spec: TrajectorySpec, t: float) -> float:
    """
    Distance on the emitted clock, t in [0, T].

    The emitted ramp is the window [head T_u, (1 - tail) T_u] of the untruncated
    trajectory, so the CP voltages stay where the full trajectory puts them.
    """
    if not -1e-15 * spec.T <= t <= spec.T * (1 + 1e-15):
        raise range_error("t", t, 0.0, spec.T)
    duration = spec.untruncated_duration
    return distance_untruncated(spec, spec.truncate_head * duration + min(max(t, 0.0), spec.T))


def voltages_from_alpha(alpha: float, mesh: RampMesh, basis: SegmentBasis) -> VoltageSet:
    """
    Interpolate U_S and U_O linearly in alpha and solve for U_C.

    U_C = (alpha - alpha' - alpha_O U_O - alpha_S U_S) / alpha_C keeps the harmonic
    coefficient exactly equal to alpha.
    """
    span = mesh.alpha_start - mesh.alpha_end
    slack = 1e-12 * span
    if not mesh.alpha_end - slack <= alpha <= mesh.alpha_start + slack:
        raise range_error("alpha", alpha, mesh.alpha_end, mesh.alpha_start)
    nodes = mesh.anchors[::-1]
    xs = [a.alpha for a in nodes]
    u_s = float(np.interp(alpha, xs, [a.U_S for a in nodes]))
    u_o = float(np.interp(alpha, xs, [a.U_O for a in nodes]))
    u_c = (alpha - basis.alpha_prime - basis.alpha_O * u_o - basis.alpha_S * u_s) / basis.alpha_C
    return VoltageSet(U_C=u_c, U_S=u_s, U_O=u_o)


def _design_distance(potential: AxialPotential, c: PhysicalConstants) -> float:
    if potential.gamma == 0.0:
        return symmetric_distance(potential, c)
    return equilibrium_two_ion(potential, c, validity_radius=None).distance


def distance_for_alpha(
    alpha: float, mesh: RampMesh, basis: SegmentBasis, c: PhysicalConstants
) -> float:
    """Equilibrium distance of the voltage set interpolated at alpha [m]."""
    potential = coefficients_from_voltages(basis, voltages_from_alpha(alpha, mesh, basis))
    return _design_distance(potential, c)


def alpha_from_distance(
    d: float, mesh: RampMesh, basis: SegmentBasis, c: PhysicalConstants
) -> float:
    """
    Invert the mesh: find alpha whose interpolated voltages give distance d.

    beta follows the interpolated voltages at every iterate. Distances just outside
    the mesh range (relative 5e-3) clamp to the end anchors.

    Raises:
        RangeError: d not reachable within the mesh
        ConvergenceError: Root search failed
    """
    d_start = distance_for_alpha(mesh.alpha_start, mesh, basis, c)
    d_end = distance_for_alpha(mesh.alpha_end, mesh, basis, c)
    if d <= d_start:
        if d >= d_start * (1 - _ENDPOINT_SLACK):
            return mesh.alpha_start
        raise range_error("d", d, d_start, d_end)
    if d >= d_end:
        if d <= d_end * (1 + _ENDPOINT_SLACK):
            return mesh.alpha_end
        raise range_error("d", d, d_start, d_end)

    def mismatch(alpha: float) -> float:
        return distance_for_alpha(alpha, mesh, basis, c) - d

    try:
        root, info = optimize.brentq(
            mismatch,
            mesh.alpha_end,
            mesh.alpha_start,
            xtol=1e-12 * (mesh.alpha_start - mesh.alpha_end),
            rtol=4.0 * np.finfo(float).eps,
            maxiter=200,
            full_output=True,
        )
    except ValueError as exc:
        raise RangeError(
            message=f"Distance {d:.4e} m is not bracketed by the mesh", details={"d": d}
        ) from exc
    if not info.converged:
        raise ConvergenceError(
            message=f"alpha(d) inversion did not converge for d={d:.4e} m",
            details={"d": d, "iterations": info.iterations},
        )
    return float(root)


def _cp_window(alpha: np.ndarray, mesh: RampMesh, cp_index: int) -> np.ndarray:
    """Triangular weight: 1 at the CP sample, 0 at the samples of the adjacent anchors."""
    n = len(alpha)
    position = mesh.cp_position
    previous = mesh.anchors[position - 1].alpha if position > 0 else None
    following = mesh.anchors[position + 1].alpha if position + 1 < len(mesh.anchors) else None

    left = 0
    if previous is not None:
        before = np.flatnonzero(alpha >= previous)
        left = int(before[-1]) if before.size else 0
    right = n - 1
    if following is not None:
        after = np.flatnonzero(alpha <= following)
        right = int(after[0]) if after.size else n - 1

    weight = np.zeros(n)
    if cp_index > left:
        weight[left : cp_index + 1] = np.linspace(0.0, 1.0, cp_index - left + 1)
    if right > cp_index:
        weight[cp_index : right + 1] = np.linspace(1.0, 0.0, right - cp_index + 1)
    weight[cp_index] = 1.0
    return weight


def build_waveform(
    spec: TrajectorySpec,
    mesh: RampMesh,
    config: RampConfig,
    basis: SegmentBasis,
    c: PhysicalConstants,
) -> Waveform:
    """
    Sample the t -> d -> alpha -> voltages chain at the configured rate.

    Args:
        spec: Distance trajectory
        mesh: Interpolation anchors
        config: Offsets, sample rate and voltage limit
        basis: Segment basis
        c: Physical constants

    Returns:
        Waveform with T * sample_rate samples

    Raises:
        RateError: sample rate above the AWG limit
        SaturationError: a channel leaves the voltage range
    """
    if config.sample_rate > config.max_sample_rate:
        raise RateError(
            message=(
                f"Sample rate {config.sample_rate:.4g} S/s exceeds the AWG limit "
                f"{config.max_sample_rate:.4g} S/s"
            ),
            details={"sample_rate": config.sample_rate, "max": config.max_sample_rate},
        )
    n_samples = int(round(spec.T * config.sample_rate))
    if n_samples < 2:
        raise range_error("n_samples", n_samples, 2, None)
    dt = 1.0 / config.sample_rate
    times = np.arange(n_samples) * dt

    alphas = np.empty(n_samples)
    distances = np.empty(n_samples)
    voltages: List[VoltageSet] = []
    for k, t in enumerate(times):
        d = distance_at(spec, t)
        alpha = alpha_from_distance(d, mesh, basis, c)
        distances[k] = d
        alphas[k] = alpha
        voltages.append(voltages_from_alpha(alpha, mesh, basis))

    u_c = np.array([v.U_C for v in voltages])
    u_s = np.array([v.U_S for v in voltages])
    u_o = np.array([v.U_O for v in voltages])
    du_o = np.full(n_samples, config.dU_O)

    cp_index: Optional[int] = None
    if alphas.min() <= 0.0 <= alphas.max():
        cp_index = int(np.argmin(np.abs(alphas)))
        if config.dU_C_cp != 0.0:
            u_c = u_c + config.dU_C_cp * _cp_window(alphas, mesh, cp_index)
    elif config.dU_C_cp != 0.0:
        raise RangeError(
            message="CP offset requested but the emitted ramp does not cross the critical point",
            details={"alpha_min": float(alphas.min()), "alpha_max": float(alphas.max())},
        )

    for name, values in zip(CHANNELS, (u_c, u_s, u_o, du_o)):
        offending = np.flatnonzero(np.abs(values) > config.voltage_limit)
        if offending.size:
            raise saturation_error(name, offending, config.voltage_limit)

    reduced = alphas < 0.0
    logger.info(
        "Designed %d-sample waveform: T=%.1f us, CP sample %s, d %.2f -> %.2f um",
        n_samples,
        spec.T * 1e6,
        cp_index,
        distances[0] * 1e6,
        distances[-1] * 1e6,
    )
    return Waveform(
        sample_period=dt,
        U_C=u_c,
        U_S=u_s,
        U_O=u_o,
        dU_O=du_o,
        cp_index=cp_index,
        reduced_accuracy=reduced,
        trajectory=spec,
        metadata={"design_alpha_range": [float(alphas[0]), float(alphas[-1])]},
    )


def reverse_waveform(w: Waveform) -> Waveform:
    """Time-reversed copy, used to merge two ions back into one well."""
    cp_index = None if w.cp_index is None else w.n_samples - 1 - w.cp_index
    mask = None if w.reduced_accuracy is None else w.reduced_accuracy[::-1].copy()
    return replace(
        w,
        U_C=w.U_C[::-1].copy(),
        U_S=w.U_S[::-1].copy(),
        U_O=w.U_O[::-1].copy(),
        dU_O=w.dU_O[::-1].copy(),
        cp_index=cp_index,
        reduced_accuracy=mask,
        is_reversed=not w.is_reversed,
    )


def frequency_trace(
    w: Waveform, basis: SegmentBasis, c: PhysicalConstants
) -> FrequencyTrace:
    """
    Local COM frequency sqrt((q/m)(3 beta d^2 + 2 alpha)) per sample.

    Past the CP (alpha < 0) the Taylor model loses accuracy; those samples are
    flagged in reduced_accuracy.
    """
    alpha, beta, gamma = w.coefficients(basis)
    omega = np.empty(w.n_samples)
    distance = np.empty(w.n_samples)
    for k in range(w.n_samples):
        potential = AxialPotential(float(alpha[k]), float(beta[k]), float(gamma[k]))
        distance[k] = _design_distance(potential, c)
        omega[k] = local_frequency(potential, distance[k], c)
    return FrequencyTrace(
        times=w.times, omega=omega, distance=distance, reduced_accuracy=alpha < 0.0
    )


def design_distances(
    spec: TrajectorySpec, n_samples: int, sample_rate: float
) -> np.ndarray:
    """Target distances of each emitted sample [m]."""
    return np.array([distance_at(spec, k / sample_rate) for k in range(n_samples)])
