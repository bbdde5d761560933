"""
Axial trap model: Taylor-expanded potential, two-ion equilibria and mode frequencies.

All quantities are SI. The axial potential around the trap center is
V(x) = beta x^4 + alpha x^2 + gamma x, with (alpha, beta, gamma) linear in the
segment voltages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, optimize

from ionsplit.constants import PhysicalConstants
from ionsplit.errors import (
    ConvergenceError,
    NoEquilibriumError,
    UnstableConfigurationError,
    non_confining_error,
    range_error,
)

logger = logging.getLogger(__name__)

# One segment width; the Taylor expansion only holds well inside it.
DEFAULT_VALIDITY_RADIUS = 200e-6
DEFAULT_FORCE_TOLERANCE = 1e-25
DEFAULT_VOLTAGE_RANGE = 10.0

ArrayLike = Union[float, np.ndarray]

# Calibrated coefficients of the reference trap (1 sigma in REFERENCE_UNCERTAINTIES).
REFERENCE_COEFFICIENTS: Dict[str, float] = {
    "alpha_C": -2.612e6,
    "alpha_S": -1.279e6,
    "alpha_O": 0.993e6,
    "alpha_prime": -1.956e6,
    "beta_C": 3.1e13,
    "beta_S": -6.2e12,
    "beta_O": 0.0,
    "beta_prime": 1.5e14,
    "gamma_S": 0.0,
    "gamma_O": 333.0,
    "gamma_prime": 0.0,
}

REFERENCE_UNCERTAINTIES: Dict[str, float] = {
    "alpha_C": 0.007e6,
    "alpha_S": 0.012e6,
    "alpha_O": 0.005e6,
    "alpha_prime": 0.035e6,
    "beta_C": 0.1e13,
    "beta_S": 0.3e12,
    "beta_prime": 0.1e14,
}

COEFFICIENT_NAMES: Tuple[str, ...] = tuple(REFERENCE_COEFFICIENTS)


@dataclass(frozen=True)
class SegmentBasis:
    """
    Per-segment expansion coefficients of the axial potential.

    Attributes:
        alpha_C, alpha_S, alpha_O: Harmonic coefficients [m^-2 per volt]
        beta_C, beta_S, beta_O: Quartic coefficients [m^-4 per volt]
        gamma_S, gamma_O: Tilt coefficients for differential voltages [m^-1 per volt]
        alpha_prime, beta_prime, gamma_prime: Stray offsets [V m^-2, V m^-4, V m^-1]
        uncertainties: Optional 1 sigma per coefficient name
    """

    alpha_C: float = REFERENCE_COEFFICIENTS["alpha_C"]
    alpha_S: float = REFERENCE_COEFFICIENTS["alpha_S"]
    alpha_O: float = REFERENCE_COEFFICIENTS["alpha_O"]
    alpha_prime: float = REFERENCE_COEFFICIENTS["alpha_prime"]
    beta_C: float = REFERENCE_COEFFICIENTS["beta_C"]
    beta_S: float = REFERENCE_COEFFICIENTS["beta_S"]
    beta_O: float = REFERENCE_COEFFICIENTS["beta_O"]
    beta_prime: float = REFERENCE_COEFFICIENTS["beta_prime"]
    gamma_S: float = REFERENCE_COEFFICIENTS["gamma_S"]
    gamma_O: float = REFERENCE_COEFFICIENTS["gamma_O"]
    gamma_prime: float = REFERENCE_COEFFICIENTS["gamma_prime"]
    uncertainties: Mapping[str, float] = field(
        default_factory=lambda: dict(REFERENCE_UNCERTAINTIES)
    )

    def __post_init__(self) -> None:
        for name in COEFFICIENT_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"Coefficient {name} must be finite, got {value!r}")
        for name, sigma in self.uncertainties.items():
            if name not in COEFFICIENT_NAMES:
                raise ValueError(f"Uncertainty given for unknown coefficient {name!r}")
            if not (sigma >= 0):
                raise ValueError(f"Uncertainty for {name} must be non-negative, got {sigma!r}")

    def coefficients(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in COEFFICIENT_NAMES}

    def updated(self, **changes: float) -> "SegmentBasis":
        """Return a copy with some coefficients (and their uncertainties) replaced."""
        sigmas = dict(self.uncertainties)
        for name in list(changes):
            if name.endswith("_sigma"):
                sigmas[name[: -len("_sigma")]] = changes.pop(name)
        return replace(self, uncertainties=sigmas, **changes)

    def to_dict(self) -> Dict[str, object]:
        return {
            "coefficients": self.coefficients(),
            "uncertainties": dict(sorted(self.uncertainties.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "SegmentBasis":
        coefficients = dict(data.get("coefficients", data))  # type: ignore[arg-type]
        coefficients.pop("uncertainties", None)
        sigmas = dict(data.get("uncertainties", {}) or {})  # type: ignore[arg-type]
        unknown = set(coefficients) - set(COEFFICIENT_NAMES)
        if unknown:
            raise ValueError(f"Unknown basis coefficients: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in coefficients.items()}, uncertainties=sigmas)


@dataclass(frozen=True)
class VoltageSet:
    """
    Segment voltages [V]: common-mode per electrode pair plus pair differentials.
    """

    U_C: float
    U_S: float
    U_O: float
    dU_S: float = 0.0
    dU_O: float = 0.0

    def check_range(self, limit: float = DEFAULT_VOLTAGE_RANGE) -> "VoltageSet":
        for name, value in asdict(self).items():
            if abs(value) > limit:
                raise range_error(name, value, -limit, limit)
        return self

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class AxialPotential:
    """Instantaneous Taylor coefficients: alpha [V m^-2], beta [V m^-4], gamma [V m^-1]."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Potential coefficient {name} must be finite")


@dataclass(frozen=True)
class EquilibriumConfig:
    """Two-ion equilibrium positions [m] with x1 < x2."""

    x1: float
    x2: float
    residual_force: float
    iterations: int = 0

    @property
    def distance(self) -> float:
        return self.x2 - self.x1

    @property
    def center(self) -> float:
        return 0.5 * (self.x1 + self.x2)


@dataclass(frozen=True)
class ModeFrequencies:
    """Axial normal-mode angular frequencies [rad/s]."""

    omega_com: float
    omega_str: float


def coefficients_from_voltages(basis: SegmentBasis, v: VoltageSet) -> AxialPotential:
    """
    Convert segment voltages into Taylor coefficients of the axial potential.

    Args:
        basis: Calibrated segment basis
        v: Applied voltages

    Returns:
        AxialPotential with alpha, beta and gamma
    """
    alpha = v.U_C * basis.alpha_C + v.U_S * basis.alpha_S + v.U_O * basis.alpha_O
    beta = v.U_C * basis.beta_C + v.U_S * basis.beta_S + v.U_O * basis.beta_O
    gamma = v.dU_S * basis.gamma_S + v.dU_O * basis.gamma_O
    return AxialPotential(
        alpha=alpha + basis.alpha_prime,
        beta=beta + basis.beta_prime,
        gamma=gamma + basis.gamma_prime,
    )


def coefficient_arrays(
    basis: SegmentBasis,
    U_C: np.ndarray,
    U_S: np.ndarray,
    U_O: np.ndarray,
    dU_O: np.ndarray,
    dU_S: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized coefficients_from_voltages over sampled voltage channels."""
    dU_S = np.zeros_like(U_C) if dU_S is None else dU_S
    alpha = U_C * basis.alpha_C + U_S * basis.alpha_S + U_O * basis.alpha_O + basis.alpha_prime
    beta = U_C * basis.beta_C + U_S * basis.beta_S + U_O * basis.beta_O + basis.beta_prime
    gamma = dU_S * basis.gamma_S + dU_O * basis.gamma_O + basis.gamma_prime
    return alpha, beta, gamma


def evaluate_potential(
    p: AxialPotential,
    x: ArrayLike,
    validity_radius: Optional[float] = DEFAULT_VALIDITY_RADIUS,
) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    Evaluate the axial potential and its first two derivatives.

    Args:
        p: Potential coefficients
        x: Position(s) [m]
        validity_radius: Largest |x| accepted; None disables the check

    Returns:
        Tuple (V [V], dV/dx [V/m], d2V/dx2 [V/m^2])
    """
    xa = np.asarray(x, dtype=float)
    if validity_radius is not None and np.any(np.abs(xa) > validity_radius):
        worst = float(np.max(np.abs(xa)))
        raise range_error("x", worst, -validity_radius, validity_radius)
    x2 = xa * xa
    value = p.beta * x2 * x2 + p.alpha * x2 + p.gamma * xa
    first = 4.0 * p.beta * x2 * xa + 2.0 * p.alpha * xa + p.gamma
    second = 12.0 * p.beta * x2 + 2.0 * p.alpha
    if np.ndim(x) == 0:
        return float(value), float(first), float(second)
    return value, first, second


def single_well_frequency(alpha: float, c: PhysicalConstants) -> float:
    """
    Single-ion axial frequency omega = sqrt(2 q alpha / m) [rad/s].
    """
    if not alpha > 0:
        raise non_confining_error("alpha", alpha)
    return math.sqrt(2.0 * c.charge_to_mass * alpha)


def harmonic_distance(omega: float, c: PhysicalConstants) -> float:
    """Two-ion distance in a harmonic well of COM frequency omega [m]."""
    denominator = 2.0 * math.pi * c.vacuum_permittivity * c.ion_mass * omega**2
    return (c.elementary_charge**2 / denominator) ** (1.0 / 3.0)


def cp_distance(beta: float, c: PhysicalConstants) -> float:
    """Two-ion distance in a purely quartic well, (2 kappa / beta)^(1/5) [m]."""
    if not beta > 0:
        raise non_confining_error("beta", beta)
    return (2.0 * c.coulomb_factor / beta) ** 0.2


def symmetric_distance(p: AxialPotential, c: PhysicalConstants) -> float:
    """
    Positive root of the symmetric force balance (beta/2) d^5 + alpha d^3 = kappa.

    For beta > 0 the root is unique. For beta <= 0 with alpha > 0 the root nearest
    the harmonic solution is returned.

    Raises:
        NoEquilibriumError: If no positive root exists
    """
    kappa = c.coulomb_factor
    alpha, beta = p.alpha, p.beta

    def quintic(d: float) -> float:
        return 0.5 * beta * d**5 + alpha * d**3 - kappa

    if beta > 0:
        hi = (kappa / alpha) ** (1.0 / 3.0) if alpha > 0 else (2.0 * kappa / beta) ** 0.2
        if alpha < 0:
            hi = max(hi, math.sqrt(-2.0 * alpha / beta))
        while quintic(hi) <= 0:
            hi *= 2.0
        lo = 0.0
    elif alpha > 0:
        lo = 0.0
        if beta == 0:
            return (kappa / alpha) ** (1.0 / 3.0)
        hi = math.sqrt(-6.0 * alpha / (5.0 * beta))
        if quintic(hi) < 0:
            raise NoEquilibriumError(
                message="Quartic term too negative: no bounded two-ion equilibrium",
                details={"alpha": alpha, "beta": beta},
            )
    else:
        raise NoEquilibriumError(
            message="Potential is not confining (alpha <= 0 and beta <= 0)",
            details={"alpha": alpha, "beta": beta},
        )
    return optimize.brentq(quintic, lo, hi, xtol=1e-30, rtol=4.0 * np.finfo(float).eps, maxiter=500)


def _reduced_energy(p: AxialPotential, x: np.ndarray, kappa: float) -> float:
    d = x[1] - x[0]
    if d <= 0:
        return math.inf
    x2 = x * x
    return float(np.sum(p.beta * x2 * x2 + p.alpha * x2 + p.gamma * x)) + kappa / d


def _reduced_gradient(p: AxialPotential, x: np.ndarray, kappa: float) -> np.ndarray:
    d = x[1] - x[0]
    external = 4.0 * p.beta * x**3 + 2.0 * p.alpha * x + p.gamma
    coulomb = kappa / (d * d)
    return np.array([external[0] + coulomb, external[1] - coulomb])


def _reduced_hessian(p: AxialPotential, x: np.ndarray, kappa: float) -> np.ndarray:
    d = x[1] - x[0]
    coupling = 2.0 * kappa / d**3
    diag = 12.0 * p.beta * x * x + 2.0 * p.alpha + coupling
    return np.array([[diag[0], -coupling], [-coupling, diag[1]]])


def total_energy(
    p: AxialPotential, x1: float, x2: float, c: PhysicalConstants
) -> float:
    """Potential energy of the ion pair, external plus Coulomb [J]."""
    return c.elementary_charge * _reduced_energy(p, np.array([x1, x2]), c.coulomb_factor)


def total_hessian(p: AxialPotential, x1: float, x2: float, c: PhysicalConstants) -> np.ndarray:
    """Hessian of total_energy with respect to (x1, x2) [J/m^2]."""
    return c.elementary_charge * _reduced_hessian(p, np.array([x1, x2]), c.coulomb_factor)


def _default_seed(p: AxialPotential, c: PhysicalConstants) -> np.ndarray:
    d0 = symmetric_distance(AxialPotential(p.alpha, p.beta, 0.0), c)
    center = -p.gamma / (2.0 * p.alpha) if p.alpha > 0 else 0.0
    return np.array([center - 0.5 * d0, center + 0.5 * d0])


def equilibrium_two_ion(
    p: AxialPotential,
    c: PhysicalConstants,
    validity_radius: Optional[float] = DEFAULT_VALIDITY_RADIUS,
    force_tolerance: float = DEFAULT_FORCE_TOLERANCE,
    seed: Optional[Sequence[float]] = None,
    max_iter: int = 200,
) -> EquilibriumConfig:
    """
    Find the two-ion equilibrium nearest to a seed configuration.

    Uses a damped Newton iteration on the total energy, regularized so every step
    is a descent direction. Without a seed, the symmetric quintic solution shifted
    by the harmonic tilt offset is used.

    Args:
        p: Potential coefficients
        c: Physical constants
        validity_radius: Largest accepted |x_i|; None disables the check
        force_tolerance: Largest accepted residual force per ion [N]
        seed: Optional (x1, x2) starting point [m]
        max_iter: Newton iteration limit

    Returns:
        EquilibriumConfig

    Raises:
        NoEquilibriumError: No bounded minimum near the seed or outside the validity radius
        ConvergenceError: Newton iteration did not converge
    """
    kappa = c.coulomb_factor
    if seed is None:
        x = _default_seed(p, c)
    else:
        x = np.sort(np.asarray(seed, dtype=float))
        if x[1] - x[0] <= 0:
            raise ValueError("Seed positions must be distinct")

    scale = max(x[1] - x[0], 1e-9)
    escape = 1e3 * (validity_radius or 1e-3)
    trace: List[Dict[str, float]] = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        grad = _reduced_gradient(p, x, kappa)
        hess = _reduced_hessian(p, x, kappa)
        energy = _reduced_energy(p, x, kappa)
        trace.append({"x1": float(x[0]), "x2": float(x[1]), "force": float(np.max(np.abs(grad)))})

        shift = 0.0
        hess_norm = float(np.max(np.abs(hess)))
        for _ in range(60):
            try:
                factor = linalg.cho_factor(hess + shift * np.eye(2))
                break
            except linalg.LinAlgError:
                shift = max(2.0 * shift, 1e-10 * hess_norm)
        else:
            raise ConvergenceError(
                message="Could not regularize the Hessian", details={"trace": trace[-10:]}
            )
        step = -linalg.cho_solve(factor, grad)

        tolerance = 1e-14 * abs(energy) + 1e-300
        accepted = False
        for _ in range(80):
            trial = x + step
            if trial[1] - trial[0] > 0 and _reduced_energy(p, trial, kappa) <= energy + tolerance:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = shift == 0.0
            break

        x = trial
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > escape:
            raise NoEquilibriumError(
                message="Iteration escaped: potential has no bounded minimum near the seed",
                details={"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma, "trace": trace[-10:]},
            )
        if shift == 0.0 and np.max(np.abs(step)) <= 1e-13 * scale:
            converged = True
            break

    grad = _reduced_gradient(p, x, kappa)
    residual = c.elementary_charge * float(np.max(np.abs(grad)))
    if not converged and residual >= force_tolerance:
        raise ConvergenceError(
            message=f"Equilibrium search did not converge in {max_iter} iterations",
            details={"residual_force": residual, "trace": trace[-10:]},
        )
    if residual >= force_tolerance:
        raise ConvergenceError(
            message=f"Residual force {residual:.3e} N above tolerance {force_tolerance:.1e} N",
            details={"residual_force": residual, "trace": trace[-10:]},
        )
    if validity_radius is not None and np.max(np.abs(x)) > validity_radius:
        raise NoEquilibriumError(
            message="Equilibrium lies outside the validity radius of the Taylor model",
            details={"x1": float(x[0]), "x2": float(x[1]), "validity_radius": validity_radius},
        )

    logger.debug("equilibrium found after %d iterations: d=%.4e m", iterations, x[1] - x[0])
    return EquilibriumConfig(
        x1=float(x[0]), x2=float(x[1]), residual_force=residual, iterations=iterations
    )


def local_frequency(p: AxialPotential, d: float, c: PhysicalConstants) -> float:
    """
    Local COM frequency at distance d: omega = sqrt((q/m)(3 beta d^2 + 2 alpha)) [rad/s].
    """
    curvature = 3.0 * p.beta * d * d + 2.0 * p.alpha
    if not curvature > 0:
        raise non_confining_error("3*beta*d^2 + 2*alpha", curvature)
    return math.sqrt(c.charge_to_mass * curvature)


def normal_modes(
    p: AxialPotential, eq: EquilibriumConfig, c: PhysicalConstants
) -> ModeFrequencies:
    """
    Axial normal-mode frequencies from the Hessian of the total energy.

    Raises:
        UnstableConfigurationError: If the Hessian has a non-positive eigenvalue
    """
    hessian = total_hessian(p, eq.x1, eq.x2, c) / c.ion_mass
    eigenvalues = linalg.eigvalsh(hessian)
    if eigenvalues[0] <= 0:
        raise UnstableConfigurationError(
            message="Configuration is not a minimum of the total energy",
            details={"eigenvalues": eigenvalues.tolist(), "x1": eq.x1, "x2": eq.x2},
        )
    return ModeFrequencies(
        omega_com=float(math.sqrt(eigenvalues[0])), omega_str=float(math.sqrt(eigenvalues[1]))
    )


def potential_extrema(p: AxialPotential) -> np.ndarray:
    """Sorted real roots of dV/dx = 0 (well minima and barrier maxima) [m]."""
    roots = np.roots([4.0 * p.beta, 0.0, 2.0 * p.alpha, p.gamma])
    real = roots[np.abs(roots.imag) <= 1e-9 * np.max(np.abs(roots) + 1e-300)].real
    return np.sort(real)


def barrier_position(p: AxialPotential) -> Optional[float]:
    """Position of the central barrier of a double well, or None for a single well."""
    if p.beta <= 0 or p.alpha >= 0:
        return None
    extrema = potential_extrema(p)
    if extrema.size != 3:
        return None
    return float(extrema[1])
