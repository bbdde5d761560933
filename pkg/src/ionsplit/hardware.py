"""
Hardware model between waveform design and trap: AWG quantization and the
second-order low-pass filters on every segment line.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np
from scipy import signal

from ionsplit.errors import RangeError, RateError, saturation_error
from ionsplit.rampgen import CHANNELS, Waveform
from ionsplit.trapmodel import SegmentBasis, VoltageSet, coefficient_arrays

logger = logging.getLogger(__name__)

DISCRETIZATIONS = ("zoh", "bilinear")


@dataclass(frozen=True)
class AwgSpec:
    """
    Arbitrary waveform generator limits.

    Attributes:
        range: Output range +/- [V]
        resolution: Output step [V]
        max_rate: Update-rate limit [samples/s]
    """

    range: float = 10.0
    resolution: float = 0.3e-3
    max_rate: float = 2.5e6

    def __post_init__(self) -> None:
        if not self.range > 0:
            raise ValueError("AWG range must be positive")
        if not self.resolution > 0:
            raise ValueError("AWG resolution must be positive")
        if not self.max_rate > 0:
            raise ValueError("AWG max_rate must be positive")


@dataclass(frozen=True)
class FilterSpec:
    """
    Second-order low-pass H(s) = w0^2 / (s^2 + (w0/Q) s + w0^2) with unity DC gain.

    Attributes:
        cutoff: f_c [Hz]
        q: Quality factor (1/sqrt(2) is Butterworth)
        order: Filter order (only 2 is supported)
        discretization: "zoh" for the exact held-input response or "bilinear"
    """

    cutoff: float = 50e3
    q: float = 1.0 / math.sqrt(2.0)
    order: int = 2
    discretization: str = "zoh"

    def __post_init__(self) -> None:
        if not self.cutoff > 0:
            raise ValueError("Filter cutoff must be positive")
        if not self.q > 0:
            raise ValueError("Filter Q must be positive")
        if self.order != 2:
            raise ValueError("Only second-order filters are modeled")
        if self.discretization not in DISCRETIZATIONS:
            raise ValueError(f"discretization must be one of {DISCRETIZATIONS}")

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.cutoff

    def transfer_function(self) -> Tuple[np.ndarray, np.ndarray]:
        w0 = self.omega0
        return np.array([w0 * w0]), np.array([1.0, w0 / self.q, w0 * w0])

    def discrete(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """Digital (b, a) coefficients at step dt."""
        if self.discretization == "zoh":
            num, den = self.transfer_function()
            b, a, _ = signal.cont2discrete((num, den), dt, method="zoh")
            return np.atleast_1d(np.squeeze(b)), np.atleast_1d(a)
        # Prewarp so the -3 dB point of a Butterworth stays at f_c.
        warped = 2.0 / dt * math.tan(0.5 * self.omega0 * dt)
        num = np.array([warped * warped])
        den = np.array([1.0, warped / self.q, warped * warped])
        return signal.bilinear(num, den, fs=1.0 / dt)

    def overshoot_ratio(self) -> float:
        """
        Largest excursion beyond the input extrema, as a fraction of the input range.

        Sum of the negative lobes of the impulse response, r / (1 - r) with
        r = exp(-pi zeta / sqrt(1 - zeta^2)) and zeta = 1 / (2 Q).
        """
        zeta = 1.0 / (2.0 * self.q)
        if zeta >= 1.0:
            return 0.0
        r = math.exp(-math.pi * zeta / math.sqrt(1.0 - zeta * zeta))
        return r / (1.0 - r)

    def to_dict(self) -> Dict[str, object]:
        return {
            "cutoff_Hz": self.cutoff,
            "q": self.q,
            "order": self.order,
            "discretization": self.discretization,
        }


class ContinuousVoltage:
    """
    Segment voltages as a function of time, linearly interpolated between nodes.

    Times beyond the last node hold the final value.
    """

    def __init__(self, times: np.ndarray, channels: Mapping[str, np.ndarray]):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("ContinuousVoltage needs at least two time nodes")
        if np.any(np.diff(times) <= 0):
            raise ValueError("Time nodes must be strictly increasing")
        missing = set(CHANNELS) - set(channels)
        if missing:
            raise ValueError(f"Missing channels: {sorted(missing)}")
        self.times = times
        self.channels: Dict[str, np.ndarray] = {}
        for name in CHANNELS:
            values = np.asarray(channels[name], dtype=float)
            if values.shape != times.shape:
                raise ValueError(f"Channel {name} does not match the time grid")
            self.channels[name] = values

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def start(self) -> float:
        return float(self.times[0])

    def __call__(self, t: float) -> VoltageSet:
        return VoltageSet(
            U_C=float(np.interp(t, self.times, self.channels["U_C"])),
            U_S=float(np.interp(t, self.times, self.channels["U_S"])),
            U_O=float(np.interp(t, self.times, self.channels["U_O"])),
            dU_O=float(np.interp(t, self.times, self.channels["dU_O"])),
        )

    def sample(self, times: np.ndarray) -> Dict[str, np.ndarray]:
        times = np.asarray(times, dtype=float)
        return {name: np.interp(times, self.times, v) for name, v in self.channels.items()}

    def coefficients(
        self, basis: SegmentBasis, times: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(alpha, beta, gamma) at the requested times."""
        values = self.sample(times)
        return coefficient_arrays(
            basis, values["U_C"], values["U_S"], values["U_O"], values["dU_O"]
        )

    def extrema(self) -> Dict[str, Tuple[float, float]]:
        return {name: (float(v.min()), float(v.max())) for name, v in self.channels.items()}

    @classmethod
    def from_waveform(cls, w: Waveform, hold_after: float = 0.0) -> "ContinuousVoltage":
        """
        Unfiltered waveform, linearly interpolated between sample instants.

        Node k sits at k dt, so the reversed waveform is the exact time mirror.
        """
        times = w.times
        channels = {name: np.asarray(w.channel(name), dtype=float) for name in CHANNELS}
        if hold_after > 0:
            times = np.append(times, times[-1] + hold_after)
            channels = {name: np.append(v, v[-1]) for name, v in channels.items()}
        return cls(times, channels)


def quantize(w: Waveform, spec: AwgSpec) -> Waveform:
    """
    Round every sample onto the AWG resolution grid.

    Raises:
        RateError: Waveform sample rate above the AWG limit
        SaturationError: Sample outside the output range
    """
    if w.sample_rate > spec.max_rate * (1 + 1e-12):
        raise RateError(
            message=(
                f"Sample rate {w.sample_rate:.4g} S/s exceeds AWG limit {spec.max_rate:.4g} S/s"
            ),
            details={"sample_rate": w.sample_rate, "max_rate": spec.max_rate},
        )
    limit_steps = math.floor(spec.range / spec.resolution + 1e-9)
    quantized: Dict[str, np.ndarray] = {}
    for name in CHANNELS:
        values = np.asarray(w.channel(name), dtype=float)
        offending = np.flatnonzero(np.abs(values) > spec.range)
        if offending.size:
            raise saturation_error(name, offending, spec.range)
        steps = np.clip(np.round(values / spec.resolution), -limit_steps, limit_steps)
        quantized[name] = steps * spec.resolution
    return w.with_channels(**quantized)


def _hold(values: np.ndarray, oversample: int, extra: int) -> np.ndarray:
    held = np.repeat(values, oversample)
    if extra:
        held = np.concatenate([held, np.full(extra, values[-1])])
    return held


def apply_filter(
    w: Waveform, spec: FilterSpec, oversample: int = 20, hold_after: float = 0.0
) -> ContinuousVoltage:
    """
    Pass the zero-order-held waveform through the segment low-pass filters.

    Each filter starts in steady state at the first sample. The output is defined on
    nodes spaced dt / oversample from 0 to duration + hold_after, with the final
    sample held after the ramp.

    Args:
        w: Sampled waveform
        spec: Filter parameters
        oversample: Filter steps per waveform sample
        hold_after: Extra time after the ramp [s]

    Returns:
        ContinuousVoltage
    """
    if oversample < 1 or int(oversample) != oversample:
        raise RangeError(message=f"oversample must be a positive integer, got {oversample!r}")
    dt = w.sample_period / oversample
    if 1.0 / dt < 8.0 * spec.cutoff:
        raise RangeError(
            message="Filter step too coarse: need 4x oversampling of the cutoff Nyquist rate",
            details={"step_rate": 1.0 / dt, "cutoff": spec.cutoff},
        )
    b, a = spec.discrete(dt)
    zi_unit = signal.lfilter_zi(b, a)
    extra = int(math.ceil(hold_after / dt - 1e-9)) if hold_after > 0 else 0

    channels: Dict[str, np.ndarray] = {}
    for name in CHANNELS:
        held = _hold(np.asarray(w.channel(name), dtype=float), oversample, extra + 1)
        filtered, _ = signal.lfilter(b, a, held, zi=zi_unit * held[0])
        channels[name] = filtered
    times = np.arange(len(channels["U_C"])) * dt
    logger.debug(
        "Filtered %d samples x%d (%s, f_c=%.1f kHz, Q=%.3f)",
        w.n_samples,
        oversample,
        spec.discretization,
        spec.cutoff / 1e3,
        spec.q,
    )
    return ContinuousVoltage(times, channels)
