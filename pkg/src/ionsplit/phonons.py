"""
Phonon-number distributions of displaced thermal states and the sideband Rabi
forward model.

Large thermal occupations are added by exponentiating the heating rate-equation
generator (the thermalization kernel) instead of summing displaced number states.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy import linalg, optimize, special
from scipy.sparse import diags
from scipy.sparse.linalg import expm_multiply

from ionsplit.errors import DomainError, TruncationError, range_error

logger = logging.getLogger(__name__)

# Largest quantum number accepted by the closed-form displaced number-state overlap.
DISPLACED_FOCK_LIMIT = 150
TAIL_TOLERANCE = 1e-6
KERNEL_RESIDUAL_TOLERANCE = 1e-8
DIRECT_ROUTE_MAX_MEAN = 20.0
SUPPORTED_TRANSITIONS = (0, 1, -1, -2)
MIN_TRUNCATION = 4

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class MotionalState:
    """
    Displaced thermal state: thermal mean n_th and coherent mean n_coh = |zeta|^2.
    """

    n_th: float = 0.0
    n_coh: float = 0.0

    def __post_init__(self) -> None:
        if not (self.n_th >= 0 and self.n_coh >= 0):
            raise ValueError(f"Phonon means must be non-negative, got {self.n_th}, {self.n_coh}")

    @property
    def zeta(self) -> float:
        return math.sqrt(self.n_coh)

    @property
    def mean(self) -> float:
        return self.n_th + self.n_coh

    @property
    def variance(self) -> float:
        return self.n_th * (self.n_th + 1.0) + self.n_coh * (2.0 * self.n_th + 1.0)


@dataclass(frozen=True, eq=False)
class PhononDistribution:
    """
    Populations p_0..p_N with an upper bound on the mass beyond N.
    """

    probabilities: np.ndarray
    tail_bound: float = 0.0

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("Distribution must be a non-empty 1D array")
        if np.any(p < -1e-10):
            raise ValueError("Negative populations in distribution")
        p = np.clip(p, 0.0, None)
        total = float(p.sum())
        if not (1.0 - 10 * TAIL_TOLERANCE <= total <= 1.0 + 1e-9):
            raise ValueError(f"Populations sum to {total:.9f}, expected 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def truncation(self) -> int:
        return len(self.probabilities) - 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(len(self.probabilities))

    @property
    def norm(self) -> float:
        return float(self.probabilities.sum())

    @property
    def mean(self) -> float:
        return float(self.levels @ self.probabilities)

    @property
    def variance(self) -> float:
        n = self.levels
        return float((n * n) @ self.probabilities) - self.mean**2

    def padded(self, size: int) -> np.ndarray:
        if size < len(self.probabilities):
            raise ValueError("Cannot pad to a smaller size")
        out = np.zeros(size)
        out[: len(self.probabilities)] = self.probabilities
        return out


@dataclass(frozen=True)
class RabiModel:
    """
    Sideband Rabi drive.

    Attributes:
        omega: Bare Rabi frequency [rad/s]
        eta: Lamb-Dicke factor
    """

    omega: float
    eta: float = 0.23

    def __post_init__(self) -> None:
        if not self.omega > 0:
            raise ValueError("Rabi frequency must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("Lamb-Dicke factor must lie in (0, 1)")


def thermal_distribution(n_bar: float, N: int) -> np.ndarray:
    """Closed-form thermal populations n_bar^n / (n_bar+1)^(n+1), n = 0..N."""
    n = np.arange(N + 1)
    if n_bar == 0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(n_bar) - (n + 1) * math.log1p(n_bar))


def coherent_distribution(n_coh: float, N: int) -> np.ndarray:
    """Poisson populations of a coherent state, n = 0..N."""
    n = np.arange(N + 1)
    if n_coh == 0:
        return (n == 0).astype(float)
    return np.exp(-n_coh + special.xlogy(n, n_coh) - special.gammaln(n + 1))


def _displaced_fock_matrix(k: np.ndarray, n: np.ndarray, x: float) -> np.ndarray:
    """|<k|D(zeta)|n>|^2 broadcast over k and n, with x = |zeta|^2."""
    k = np.asarray(k)
    n = np.asarray(n)
    if x == 0:
        return (k == n).astype(float)
    lower = np.minimum(k, n)
    upper = np.maximum(k, n)
    order = upper - lower
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        laguerre = special.eval_genlaguerre(lower, order, x)
        log_p = (
            -x
            + order * math.log(x)
            + special.gammaln(lower + 1)
            - special.gammaln(upper + 1)
            + 2.0 * np.log(np.abs(laguerre))
        )
        result = np.exp(log_p)
    if not np.all(np.isfinite(result)):
        raise DomainError(
            message="Displaced number-state overlap overflowed; use the thermalization route",
            details={"max_level": int(np.max(upper)), "x": x},
        )
    return result


def displaced_fock_prob(k: int, n: int, zeta_mag: float) -> float:
    """
    Population of |k> in the displaced number state D(zeta)|n>.

    Uses e^{-x} x^{|k-n|} (n_<! / n_>!) [L_{n_<}^{|k-n|}(x)]^2 with x = |zeta|^2.

    Raises:
        RangeError: k or n above DISPLACED_FOCK_LIMIT
    """
    if k < 0 or n < 0:
        raise ValueError("Quantum numbers must be non-negative")
    if max(k, n) > DISPLACED_FOCK_LIMIT:
        raise range_error("max(k, n)", max(k, n), 0, DISPLACED_FOCK_LIMIT)
    return float(_displaced_fock_matrix(np.array(k), np.array(n), zeta_mag * zeta_mag))


def _log_tail_bound(state: MotionalState, N: int) -> float:
    """
    log of the Chernoff bound on P(n > N) from the generating function
    G(s) = exp(x (s-1) / (1 - nbar (s-1))) / (1 - nbar (s-1)).
    """
    x, nbar = state.n_coh, state.n_th
    if x == 0 and nbar == 0:
        return -math.inf

    def log_bound(log_s: float) -> float:
        s1 = math.expm1(log_s)
        denominator = 1.0 - nbar * s1
        return x * s1 / denominator - math.log(denominator) - (N + 1) * log_s

    upper = math.log1p(1.0 / nbar) if nbar > 0 else math.log(10.0 * (N + 1) / x + 2.0)
    result = optimize.minimize_scalar(
        log_bound, bounds=(1e-12, upper * (1 - 1e-9)), method="bounded", options={"xatol": 1e-10}
    )
    return min(float(result.fun), 0.0)


def tail_bound(state: MotionalState, N: int) -> float:
    """Upper bound on the population above level N."""
    return math.exp(_log_tail_bound(state, N))


def choose_truncation(state: MotionalState, tolerance: float = TAIL_TOLERANCE) -> int:
    """
    Smallest truncation whose tail bound is below tolerance, never less than
    mean + 10 standard deviations.
    """
    N = max(int(math.ceil(state.mean + 10.0 * math.sqrt(state.variance))), MIN_TRUNCATION)
    log_tolerance = math.log(tolerance)
    while _log_tail_bound(state, N) > log_tolerance:
        N = int(math.ceil(N * 1.1)) + 1
    return N


class ThermalizationKernel:
    """
    Heating generator K on levels 0..N and its eigendecomposition.

    dp/dn_th = K p with K[n, n-1] = n, K[n, n+1] = n + 1, K[n, n] = -(2n + 1), and
    the top diagonal set to -N so every column sums to zero. K is symmetric, so
    D^-1 = D^T.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("Kernel dimension must be at least 1")
        self.dimension = dimension
        n = np.arange(dimension + 1, dtype=float)
        self.diagonal = -(2.0 * n + 1.0)
        self.diagonal[-1] = -float(dimension)
        self.off_diagonal = n[1:].copy()
        self.eigenvalues, self.eigenvectors = linalg.eigh_tridiagonal(
            self.diagonal, self.off_diagonal
        )
        self.residual = self._reconstruction_residual()
        self.use_eigen = self.residual <= KERNEL_RESIDUAL_TOLERANCE
        if not self.use_eigen:
            logger.warning(
                "Kernel eigendecomposition residual %.2e at N=%d; using expm_multiply",
                self.residual,
                dimension,
            )

    @property
    def size(self) -> int:
        return self.dimension + 1

    def matrix(self):
        """Sparse K."""
        return diags(
            [self.off_diagonal, self.diagonal, self.off_diagonal], [-1, 0, 1], format="csr"
        )

    def _reconstruction_residual(self) -> float:
        d = self.eigenvectors
        kd = self.diagonal[:, None] * d
        kd[1:] += self.off_diagonal[:, None] * d[:-1]
        kd[:-1] += self.off_diagonal[:, None] * d[1:]
        return float(np.max(np.abs(kd - d * self.eigenvalues[None, :])))

    def apply(self, p: np.ndarray, n_th_added: float) -> np.ndarray:
        """exp(n_th_added K) p."""
        if self.use_eigen:
            weights = np.exp(n_th_added * self.eigenvalues) * (self.eigenvectors.T @ p)
            return self.eigenvectors @ weights
        return expm_multiply(n_th_added * self.matrix(), p)


@lru_cache(maxsize=8)
def get_kernel(dimension: int) -> ThermalizationKernel:
    """Shared kernel per dimension."""
    return ThermalizationKernel(dimension)


def _kernel_dimension(N: int) -> int:
    # Round up so nearby truncations share one factorization.
    return int(32 * math.ceil((N + 1) / 32.0)) - 1


def thermalize(
    p: PhononDistribution,
    n_th_added: float,
    kern: Optional[ThermalizationKernel] = None,
    tolerance: float = TAIL_TOLERANCE,
) -> PhononDistribution:
    """
    Add thermal occupation: p' = D exp(n_th_added Lambda) D^T p.

    Raises:
        TruncationError: Population piles up at the top level
    """
    if n_th_added < 0:
        raise ValueError("n_th_added must be non-negative")
    kern = kern or get_kernel(p.truncation)
    if p.truncation > kern.dimension:
        raise ValueError("Distribution is longer than the kernel dimension")
    vector = p.padded(kern.size)
    if n_th_added == 0:
        return PhononDistribution(vector, p.tail_bound)
    result = np.clip(kern.apply(vector, n_th_added), 0.0, None)
    top = float(result[-1])
    if top > tolerance:
        raise TruncationError(
            message=f"Top-level population {top:.2e} exceeds {tolerance:.0e}; increase N",
            details={"N": kern.dimension, "top_population": top},
        )
    return PhononDistribution(result, max(p.tail_bound, top))


def _direct_route(state: MotionalState, N: int) -> np.ndarray:
    levels = np.arange(N + 1)
    thermal = thermal_distribution(state.n_th, N)
    overlaps = _displaced_fock_matrix(levels[:, None], levels[None, :], state.n_coh)
    return overlaps @ thermal


def _eigen_route(state: MotionalState, N: int) -> np.ndarray:
    kern = get_kernel(_kernel_dimension(N))
    coherent = PhononDistribution(coherent_distribution(state.n_coh, kern.dimension))
    return thermalize(coherent, state.n_th, kern).probabilities[: N + 1]


def displaced_thermal(
    state: MotionalState, N: Optional[int] = None, method: str = "auto"
) -> PhononDistribution:
    """
    Populations of a displaced thermal state.

    Args:
        state: Thermal and coherent means
        N: Truncation (defaults to choose_truncation)
        method: "direct" (thermal average of displaced number states), "eigen"
            (kernel thermalization of the coherent state) or "auto" (direct while
            the mean is at most 20 and N fits DISPLACED_FOCK_LIMIT)

    Returns:
        PhononDistribution over levels 0..N
    """
    if method not in ("auto", "direct", "eigen"):
        raise ValueError(f"Unknown method {method!r}")
    N = choose_truncation(state) if N is None else N
    bound = tail_bound(state, N)
    if state.n_coh == 0:
        p = thermal_distribution(state.n_th, N)
    elif state.n_th == 0:
        p = coherent_distribution(state.n_coh, N)
    elif method == "direct" or (
        method == "auto" and state.mean <= DIRECT_ROUTE_MAX_MEAN and N <= DISPLACED_FOCK_LIMIT
    ):
        if N > DISPLACED_FOCK_LIMIT:
            raise range_error("N", N, 0, DISPLACED_FOCK_LIMIT)
        p = _direct_route(state, N)
    else:
        p = _eigen_route(state, N)
    return PhononDistribution(np.clip(p, 0.0, None), bound)


def rabi_matrix_element(n: ArrayLike, dn: int, eta: float) -> ArrayLike:
    """
    Coupling M_{n,dn} = e^{-eta^2/2} eta^|dn| sqrt(n_<!/n_>!) L_{n_<}^{|dn|}(eta^2).

    Transitions below the ground state return 0.
    """
    n_arr = np.asarray(n)
    target = n_arr + dn
    lower = np.minimum(n_arr, target)
    order = abs(dn)
    valid = lower >= 0
    safe_lower = np.where(valid, lower, 0)
    x = eta * eta
    with np.errstate(invalid="ignore"):
        log_ratio = 0.5 * (
            special.gammaln(safe_lower + 1) - special.gammaln(safe_lower + order + 1)
        )
        element = (
            math.exp(-0.5 * x)
            * eta**order
            * np.exp(log_ratio)
            * special.eval_genlaguerre(safe_lower, order, x)
        )
    element = np.where(valid, element, 0.0)
    if np.ndim(n) == 0:
        return float(element)
    return element


def rabi_signal(
    p: PhononDistribution, model: RabiModel, dn: int, t: ArrayLike
) -> ArrayLike:
    """
    Excitation probability sum_n p_n sin^2(Omega M_{n,dn} t / 2).
    """
    if dn not in SUPPORTED_TRANSITIONS:
        raise DomainError(
            message=f"Transition dn={dn} not supported",
            details={"supported": SUPPORTED_TRANSITIONS},
        )
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise range_error("t", float(t_arr.min()), 0.0, None)
    couplings = rabi_matrix_element(p.levels, dn, model.eta)
    phases = 0.5 * model.omega * np.multiply.outer(t_arr, couplings)
    signal = np.clip(np.sin(phases) ** 2 @ p.probabilities, 0.0, 1.0)
    if np.ndim(t) == 0:
        return float(signal)
    return signal
