"""
Calibration regressions for the segment basis, the heating law and the imaging scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ionsplit.constants import HEATING_OMEGA_UNIT, PhysicalConstants
from ionsplit.errors import (
    DegenerateScanError,
    DomainError,
    RangeError,
    UnderdeterminedFitError,
)
from ionsplit.trapmodel import (
    SegmentBasis,
    VoltageSet,
    coefficients_from_voltages,
    harmonic_distance,
)

logger = logging.getLogger(__name__)

SEGMENTS = ("C", "S", "O")


@dataclass(frozen=True)
class FrequencyScan:
    """
    Secular-frequency measurements while one segment voltage is stepped.

    Attributes:
        segment: Stepped segment ("C", "S" or "O")
        voltages: Applied voltages of the stepped segment [V]
        omegas: Measured axial frequencies [rad/s]
        sigmas: 1 sigma frequency uncertainties [rad/s]
        background: Voltages held on the other segments
    """

    segment: str
    voltages: Tuple[float, ...]
    omegas: Tuple[float, ...]
    sigmas: Tuple[float, ...]
    background: VoltageSet = VoltageSet(U_C=0.0, U_S=0.0, U_O=0.0)

    def __post_init__(self) -> None:
        if self.segment not in SEGMENTS:
            raise ValueError(f"Unknown segment {self.segment!r}")
        if not (len(self.voltages) == len(self.omegas) == len(self.sigmas)):
            raise ValueError("voltages, omegas and sigmas must have equal length")

    def segment_voltage(self, segment: str, index: int) -> float:
        if segment == self.segment:
            return self.voltages[index]
        return getattr(self.background, f"U_{segment}")


@dataclass(frozen=True)
class DistanceScan:
    """
    Ion distances measured at critical-point voltage sets.

    Attributes:
        voltage_sets: Applied voltages per point
        distances: Measured two-ion distances [m]
        sigmas: 1 sigma distance uncertainties [m]
    """

    voltage_sets: Tuple[VoltageSet, ...]
    distances: Tuple[float, ...]
    sigmas: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.voltage_sets) == len(self.distances) == len(self.sigmas)):
            raise ValueError("voltage_sets, distances and sigmas must have equal length")


@dataclass(frozen=True)
class FitResult:
    """
    Least-squares estimates with 1 sigma uncertainties.
    """

    names: Tuple[str, ...]
    values: Tuple[float, ...]
    uncertainties: Tuple[float, ...]
    rss: float
    dof: int
    covariance: Tuple[Tuple[float, ...], ...] = field(default=(), repr=False)

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def sigma(self, name: str) -> float:
        return self.uncertainties[self.names.index(name)]

    def as_basis_update(self) -> Dict[str, float]:
        """Keyword arguments for SegmentBasis.updated()."""
        update: Dict[str, float] = {}
        for name, value, sigma in zip(self.names, self.values, self.uncertainties):
            update[name] = value
            update[f"{name}_sigma"] = sigma
        return update

    def to_dict(self) -> Dict[str, object]:
        return {
            "parameters": {
                name: {"value": value, "sigma": sigma}
                for name, value, sigma in zip(self.names, self.values, self.uncertainties)
            },
            "rss": self.rss,
            "dof": self.dof,
        }


@dataclass(frozen=True)
class HeatingModel:
    """
    Anomalous heating law Gamma = a * omega^-p.

    Gamma is in phonons per ms with omega expressed in units of 2 pi MHz.
    """

    prefactor: float = 6.3
    exponent: float = 1.8
    prefactor_sigma: float = 0.0
    exponent_sigma: float = 0.0
    omega_unit: float = HEATING_OMEGA_UNIT

    def __post_init__(self) -> None:
        if not self.prefactor > 0:
            raise ValueError("Heating prefactor must be positive")

    def rate(self, omega):
        """Heating rate [phonons/ms] at angular frequency omega [rad/s]."""
        scaled = np.asarray(omega, dtype=float) / self.omega_unit
        return self.prefactor * np.power(scaled, -self.exponent)

    def rate_per_second(self, omega):
        return 1e3 * self.rate(omega)

    def to_dict(self) -> Dict[str, float]:
        return {
            "prefactor_per_ms": self.prefactor,
            "prefactor_sigma": self.prefactor_sigma,
            "exponent": self.exponent,
            "exponent_sigma": self.exponent_sigma,
            "omega_unit": "2*pi*MHz",
        }


def weighted_linear_fit(
    design: np.ndarray,
    y: np.ndarray,
    sigma: Optional[np.ndarray],
    names: Sequence[str],
) -> FitResult:
    """
    Weighted linear least squares with covariance-based uncertainties.

    Weights are 1/sigma^2. Without usable sigmas (None or any non-positive entry)
    the fit is unweighted and the covariance is scaled by the residual variance.

    Raises:
        UnderdeterminedFitError: Fewer points than parameters
        DegenerateScanError: Rank-deficient design matrix
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n_points, n_params = design.shape
    if n_points < n_params:
        raise UnderdeterminedFitError(
            message=f"{n_points} point(s) cannot determine {n_params} parameter(s)",
            details={"points": n_points, "parameters": list(names)},
        )

    absolute = sigma is not None and bool(np.all(np.asarray(sigma) > 0))
    weights = 1.0 / np.asarray(sigma, dtype=float) if absolute else np.ones(n_points)
    a_w = design * weights[:, None]
    y_w = y * weights

    col_scale = np.max(np.abs(a_w), axis=0)
    col_scale[col_scale == 0] = 1.0
    a_scaled = a_w / col_scale
    if np.linalg.matrix_rank(a_scaled) < n_params:
        raise DegenerateScanError(
            message="Design matrix is rank deficient; scan voltages do not vary",
            details={"parameters": list(names)},
        )

    solution, _, _, _ = linalg.lstsq(a_scaled, y_w)
    values = solution / col_scale
    residuals = y_w - a_w @ values
    rss = float(residuals @ residuals)
    dof = n_points - n_params

    cov_scaled = linalg.pinvh(a_scaled.T @ a_scaled)
    covariance = cov_scaled / np.outer(col_scale, col_scale)
    if not absolute and dof > 0:
        covariance = covariance * (rss / dof)
    uncertainties = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    return FitResult(
        names=tuple(names),
        values=tuple(float(v) for v in values),
        uncertainties=tuple(float(s) for s in uncertainties),
        rss=rss,
        dof=dof,
        covariance=tuple(tuple(float(v) for v in row) for row in covariance),
    )


def fit_alpha(
    scans: Iterable[FrequencyScan],
    c: PhysicalConstants,
    basis: Optional[SegmentBasis] = None,
) -> FitResult:
    """
    Fit harmonic segment coefficients from frequency-vs-voltage scans.

    All scans share one alpha_prime: omega^2 m / (2q) = sum_seg alpha_seg U_seg + alpha_prime.
    Segments without a scan are held at the basis values and subtracted.

    Args:
        scans: Frequency scans, at least one per segment to fit
        c: Physical constants
        basis: Prior basis for segments that were not scanned

    Returns:
        FitResult over alpha_<seg> for scanned segments plus alpha_prime
    """
    scans = list(scans)
    if not scans:
        raise UnderdeterminedFitError(message="No frequency scans given")
    fitted = [seg for seg in SEGMENTS if any(scan.segment == seg for scan in scans)]
    held = [seg for seg in SEGMENTS if seg not in fitted]

    rows: List[List[float]] = []
    targets: List[float] = []
    sigmas: List[float] = []
    scale = c.ion_mass / (2.0 * c.elementary_charge)
    for scan in scans:
        for i, (omega, sigma_omega) in enumerate(zip(scan.omegas, scan.sigmas)):
            rows.append([scan.segment_voltage(seg, i) for seg in fitted] + [1.0])
            target = scale * omega * omega
            for seg in held:
                voltage = scan.segment_voltage(seg, i)
                coefficient = getattr(basis, f"alpha_{seg}") if basis is not None else 0.0
                if basis is None and voltage != 0.0:
                    logger.warning("Segment %s held at %.3f V without a prior basis", seg, voltage)
                target -= coefficient * voltage
            targets.append(target)
            sigmas.append(scale * 2.0 * omega * sigma_omega)

    names = [f"alpha_{seg}" for seg in fitted] + ["alpha_prime"]
    result = weighted_linear_fit(np.array(rows), np.array(targets), np.array(sigmas), names)
    logger.info(
        "alpha fit over %d points: %s",
        len(targets),
        ", ".join(f"{n}={v:.4e}" for n, v in zip(result.names, result.values)),
    )
    return result


def beta_from_distance(d: float, c: PhysicalConstants) -> float:
    """Quartic coefficient implied by a CP distance, 2 kappa / d^5 [V m^-4]."""
    if not d > 0:
        raise DomainError(message=f"Distance must be positive, got {d!r}")
    return 2.0 * c.coulomb_factor / d**5


def fit_beta(
    scan: DistanceScan,
    basis: SegmentBasis,
    c: PhysicalConstants,
    alpha_tolerance: Optional[float] = None,
) -> FitResult:
    """
    Fit quartic segment coefficients from CP distance measurements.

    Each distance maps to beta = 2 kappa / d^5, regressed against (U_C, U_S, 1).
    beta_O is not fitted; its basis value is subtracted. Regressors that are zero
    for every point are dropped and keep their basis values.

    Args:
        scan: Distance scan at alpha = 0 voltage sets
        basis: Basis providing the alpha coefficients and beta_O
        c: Physical constants
        alpha_tolerance: Largest accepted |alpha| [V m^-2] per point

    Returns:
        FitResult over the fitted subset of beta_C, beta_S, beta_prime
    """
    n_points = len(scan.distances)
    if n_points == 0:
        raise UnderdeterminedFitError(message="Distance scan is empty")

    offending = []
    for i, voltages in enumerate(scan.voltage_sets):
        alpha = coefficients_from_voltages(basis, voltages).alpha
        magnitude = (
            abs(basis.alpha_prime)
            + abs(basis.alpha_C * voltages.U_C)
            + abs(basis.alpha_S * voltages.U_S)
            + abs(basis.alpha_O * voltages.U_O)
        )
        tolerance = alpha_tolerance if alpha_tolerance is not None else 1e-3 * magnitude
        if abs(alpha) > tolerance:
            offending.append(i)
    if offending:
        raise RangeError(
            message=f"{len(offending)} voltage set(s) are not at the critical point (alpha != 0)",
            details={"indices": offending},
        )

    u_c = np.array([v.U_C for v in scan.voltage_sets])
    u_s = np.array([v.U_S for v in scan.voltage_sets])
    u_o = np.array([v.U_O for v in scan.voltage_sets])
    d = np.array(scan.distances, dtype=float)
    beta_points = 2.0 * c.coulomb_factor / d**5
    sigma = 5.0 * beta_points * np.asarray(scan.sigmas, dtype=float) / d
    target = beta_points - basis.beta_O * u_o

    columns = []
    names = []
    for name, column in (("beta_C", u_c), ("beta_S", u_s)):
        if np.any(column != 0.0):
            columns.append(column)
            names.append(name)
    columns.append(np.ones(n_points))
    names.append("beta_prime")

    result = weighted_linear_fit(np.column_stack(columns), target, sigma, names)
    logger.info(
        "beta fit over %d points: %s",
        n_points,
        ", ".join(f"{n}={v:.4e}" for n, v in zip(result.names, result.values)),
    )
    return result


def fit_heating_power_law(
    points: Sequence[Tuple[float, float]],
    sigmas: Optional[Sequence[float]] = None,
) -> HeatingModel:
    """
    Fit Gamma = a * omega^-p by log-log regression.

    Args:
        points: (omega [rad/s], rate [phonons/ms]) pairs
        sigmas: Optional 1 sigma rate uncertainties [phonons/ms]

    Returns:
        HeatingModel with omega in units of 2 pi MHz
    """
    if len(points) < 3:
        raise UnderdeterminedFitError(
            message=f"Heating law needs at least 3 points, got {len(points)}"
        )
    omega = np.array([p[0] for p in points], dtype=float)
    rate = np.array([p[1] for p in points], dtype=float)
    if np.any(omega <= 0) or np.any(rate <= 0):
        raise DomainError(
            message="Heating-law points must have positive frequency and rate",
            details={"non_positive": np.flatnonzero((omega <= 0) | (rate <= 0)).tolist()},
        )

    x = np.log(omega / HEATING_OMEGA_UNIT)
    y = np.log(rate)
    log_sigma = None if sigmas is None else np.asarray(sigmas, dtype=float) / rate
    design = np.column_stack([np.ones_like(x), -x])
    result = weighted_linear_fit(design, y, log_sigma, ["log_prefactor", "exponent"])

    prefactor = math.exp(result["log_prefactor"])
    return HeatingModel(
        prefactor=prefactor,
        exponent=result["exponent"],
        prefactor_sigma=prefactor * result.sigma("log_prefactor"),
        exponent_sigma=result.sigma("exponent"),
    )


def magnification_from_frequency(
    omega: float, pixel_distance: float, c: PhysicalConstants
) -> float:
    """
    Imaging scale from the two-ion distance in a harmonic well.

    Args:
        omega: Axial COM frequency [rad/s]
        pixel_distance: Ion separation on the camera [px]
        c: Physical constants

    Returns:
        Scale [m/px]
    """
    if not omega > 0:
        raise DomainError(message=f"omega must be positive, got {omega!r}")
    if not pixel_distance > 0:
        raise DomainError(message=f"pixel_distance must be positive, got {pixel_distance!r}")
    return harmonic_distance(omega, c) / pixel_distance
