"""
Bayesian estimation of (n_th, n_coh, Omega) from multi-transition Rabi data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from ionsplit.errors import IdentifiabilityError
from ionsplit.phonons import MotionalState, RabiModel, displaced_thermal, rabi_signal

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("n_th", "n_coh", "omega")
PROBABILITY_CLAMP = 1e-9
ACCEPTANCE_BAND = (0.05, 0.8)
PILEUP_FRACTION = 0.2
PILEUP_WIDTH = 0.01
CREDIBLE_QUANTILES = (15.865525393145708, 84.1344746068543)


@dataclass(frozen=True)
class RabiParameters:
    """Thermal mean, coherent mean and bare Rabi frequency [rad/s]."""

    n_th: float
    n_coh: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.n_th, self.n_coh, self.omega])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "RabiParameters":
        return cls(float(values[0]), float(values[1]), float(values[2]))

    @property
    def state(self) -> MotionalState:
        return MotionalState(n_th=self.n_th, n_coh=self.n_coh)


@dataclass(frozen=True)
class RabiRecord:
    """
    One measurement setting: transition dn, pulse time t [s], and the excitation count.

    successes may be fractional when it holds an expected count.
    """

    dn: int
    t: float
    successes: float
    shots: int = 200

    def __post_init__(self) -> None:
        if not self.shots > 0:
            raise ValueError("shots must be positive")
        if not 0 <= self.successes <= self.shots:
            raise ValueError(f"successes must lie in [0, {self.shots}], got {self.successes}")
        if self.t < 0:
            raise ValueError("Pulse time must be non-negative")


@dataclass(frozen=True)
class RabiDataset:
    records: Tuple[RabiRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    @property
    def transitions(self) -> Tuple[int, ...]:
        return tuple(sorted({r.dn for r in self.records}))

    def grouped(self) -> Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per transition: (times, successes, shots) arrays."""
        groups: Dict[int, List[RabiRecord]] = {}
        for record in self.records:
            groups.setdefault(record.dn, []).append(record)
        return {
            dn: (
                np.array([r.t for r in rows], dtype=float),
                np.array([r.successes for r in rows], dtype=float),
                np.array([r.shots for r in rows], dtype=float),
            )
            for dn, rows in sorted(groups.items())
        }


@dataclass(frozen=True)
class PriorSpec:
    """Uniform priors as (lower, upper) per parameter."""

    n_th: Tuple[float, float] = (0.0, 1000.0)
    n_coh: Tuple[float, float] = (0.0, 1000.0)
    omega: Tuple[float, float] = (0.8 * 2 * math.pi * 100e3, 1.2 * 2 * math.pi * 100e3)

    def __post_init__(self) -> None:
        for name in PARAMETER_NAMES:
            lower, upper = getattr(self, name)
            if not lower < upper:
                raise ValueError(f"Prior for {name} needs lower < upper, got {(lower, upper)}")
        if self.n_th[0] < 0 or self.n_coh[0] < 0 or self.omega[0] <= 0:
            raise ValueError("Priors must respect n_th, n_coh >= 0 and omega > 0")

    @classmethod
    def around(cls, omega_nominal: float, cap: float = 1000.0, spread: float = 0.2) -> "PriorSpec":
        return cls(
            n_th=(0.0, cap),
            n_coh=(0.0, cap),
            omega=((1.0 - spread) * omega_nominal, (1.0 + spread) * omega_nominal),
        )

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.n_th, self.n_coh, self.omega], dtype=float)

    def contains(self, values: np.ndarray) -> bool:
        b = self.bounds
        return bool(np.all(values >= b[:, 0]) and np.all(values <= b[:, 1]))


@dataclass(frozen=True)
class McmcConfig:
    """
    Metropolis random-walk settings.

    Attributes:
        seed: Generator seed (required)
        n_steps: Chain length including burn-in
        burn_in: Fraction of steps discarded; proposal scales adapt only there
        step_scales: Initial proposal standard deviations (n_th, n_coh, omega)
        thin: Keep every thin-th retained sample
        adapt_interval: Steps between proposal-scale updates during burn-in
        target_acceptance: Acceptance the adaptation steers towards
    """

    seed: int
    n_steps: int = 50_000
    burn_in: float = 0.2
    step_scales: Optional[Tuple[float, float, float]] = None
    thin: int = 1
    adapt_interval: int = 100
    target_acceptance: float = 0.3

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.n_steps <= int(self.burn_in * self.n_steps) + 1:
            raise ValueError("Chain is shorter than its burn-in")
        if self.thin < 1 or self.adapt_interval < 1:
            raise ValueError("thin and adapt_interval must be positive")

    @property
    def burn_in_steps(self) -> int:
        return int(self.burn_in * self.n_steps)


@dataclass(frozen=True, eq=False)
class Posterior:
    """Summaries of the retained chain."""

    names: Tuple[str, ...]
    samples: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    intervals: np.ndarray
    acceptance_rate: float
    start: np.ndarray
    flags: Tuple[str, ...] = ()
    max_log_likelihood: float = -math.inf
    extra: Dict[str, object] = field(default_factory=dict)

    def mean(self, name: str) -> float:
        return float(self.means[self.names.index(name)])

    def std(self, name: str) -> float:
        return float(self.stds[self.names.index(name)])

    def interval(self, name: str) -> Tuple[float, float]:
        lower, upper = self.intervals[self.names.index(name)]
        return float(lower), float(upper)

    def to_dict(self, include_samples: int = 0) -> Dict[str, object]:
        """
        Args:
            include_samples: Number of thinned samples to embed (0 for none)
        """
        payload: Dict[str, object] = {
            "parameters": {
                name: {
                    "mean": float(self.means[i]),
                    "std": float(self.stds[i]),
                    "ci68": [float(self.intervals[i][0]), float(self.intervals[i][1])],
                }
                for i, name in enumerate(self.names)
            },
            "acceptance_rate": self.acceptance_rate,
            "n_samples": int(self.samples.shape[0]),
            "flags": list(self.flags),
            "max_log_likelihood": self.max_log_likelihood,
            **self.extra,
        }
        if include_samples > 0 and self.samples.size:
            stride = max(1, self.samples.shape[0] // include_samples)
            payload["samples"] = self.samples[::stride][:include_samples].tolist()
        return payload


def log_likelihood(
    params: RabiParameters, data: RabiDataset, model: RabiModel, method: str = "auto"
) -> float:
    """
    Binomial log-likelihood of the dataset under the displaced thermal forward model.

    Predicted probabilities are clamped to [1e-9, 1 - 1e-9]. method selects the
    displaced_thermal route.
    """
    if len(data) == 0:
        return 0.0
    distribution = displaced_thermal(params.state, method=method)
    drive = RabiModel(omega=params.omega, eta=model.eta)
    total = 0.0
    for dn, (times, successes, shots) in data.grouped().items():
        p = np.clip(
            rabi_signal(distribution, drive, dn, times), PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP
        )
        failures = shots - successes
        total += float(
            np.sum(
                special.gammaln(shots + 1)
                - special.gammaln(successes + 1)
                - special.gammaln(failures + 1)
                + special.xlogy(successes, p)
                + special.xlog1py(failures, -p)
            )
        )
    return total


def _log_posterior(
    values: np.ndarray, data: RabiDataset, priors: PriorSpec, model: RabiModel
) -> float:
    if not priors.contains(values):
        return -math.inf
    return log_likelihood(RabiParameters.from_array(values), data, model)


def _starting_point(
    data: RabiDataset, priors: PriorSpec, model: RabiModel
) -> Tuple[np.ndarray, float]:
    """Best of a small grid of starts, polished by Nelder-Mead."""
    bounds = priors.bounds
    omega0 = float(np.clip(model.omega, bounds[2, 0], bounds[2, 1]))
    candidates = []
    for n_th in (0.1, 2.0, 10.0, 40.0):
        for n_coh in (0.1, 5.0, 30.0, 100.0):
            values = np.clip(np.array([n_th, n_coh, omega0]), bounds[:, 0], bounds[:, 1])
            candidates.append((_log_posterior(values, data, priors, model), values))
    best_lp, best = max(candidates, key=lambda item: item[0])

    scale = np.array([1.0, 1.0, omega0])

    def objective(z: np.ndarray) -> float:
        lp = _log_posterior(z * scale, data, priors, model)
        return -lp if math.isfinite(lp) else 1e300

    result = optimize.minimize(
        objective,
        best / scale,
        method="Nelder-Mead",
        options={"maxiter": 400, "xatol": 1e-4, "fatol": 1e-6},
    )
    polished = np.clip(result.x * scale, bounds[:, 0], bounds[:, 1])
    polished_lp = _log_posterior(polished, data, priors, model)
    if polished_lp >= best_lp:
        return polished, polished_lp
    return best, best_lp


def _default_scales(start: np.ndarray) -> np.ndarray:
    return np.array(
        [max(0.1 * start[0], 0.05), max(0.1 * start[1], 0.05), 0.005 * start[2]]
    )


def _check_identifiability(data: RabiDataset, priors: PriorSpec) -> None:
    both_free = priors.n_th[1] > priors.n_th[0] and priors.n_coh[1] > priors.n_coh[0]
    if both_free and len(data.transitions) < 2:
        raise IdentifiabilityError(
            message="n_th and n_coh are both free but the data cover a single transition",
            details={"transitions": list(data.transitions)},
        )


def _diagnostic_flags(
    samples: np.ndarray, acceptance: float, priors: PriorSpec
) -> List[str]:
    flags: List[str] = []
    if not ACCEPTANCE_BAND[0] < acceptance < ACCEPTANCE_BAND[1]:
        flags.append("acceptance_out_of_band")
    bounds = priors.bounds
    for i, name in enumerate(PARAMETER_NAMES):
        lower, upper = bounds[i]
        width = PILEUP_WIDTH * (upper - lower)
        if np.mean(samples[:, i] <= lower + width) > PILEUP_FRACTION:
            flags.append(f"boundary_pileup:{name}:lower")
        if np.mean(samples[:, i] >= upper - width) > PILEUP_FRACTION:
            flags.append(f"boundary_pileup:{name}:upper")
    return flags


def run_mcmc(
    data: RabiDataset, priors: PriorSpec, cfg: McmcConfig, model: RabiModel
) -> Posterior:
    """
    Sample the posterior of (n_th, n_coh, Omega) with a Metropolis random walk.

    Proposal scales adapt during burn-in only. Results are deterministic for a seed.

    Args:
        data: Rabi dataset
        priors: Uniform prior box
        cfg: Chain settings
        model: Provides eta and the nominal Omega used to seed the chain

    Returns:
        Posterior summaries over the retained samples
    """
    _check_identifiability(data, priors)
    rng = np.random.default_rng(cfg.seed)
    current, current_lp = _starting_point(data, priors, model)
    if not math.isfinite(current_lp):
        raise IdentifiabilityError(
            message="No starting point with finite posterior density",
            details={"start": current.tolist()},
        )
    start = current.copy()
    if cfg.step_scales:
        scales = np.asarray(cfg.step_scales, dtype=float)
    else:
        scales = _default_scales(current)
    burn = cfg.burn_in_steps

    chain = np.empty((cfg.n_steps, 3))
    best_lp = current_lp
    accepted_window = 0
    accepted_retained = 0
    for step in range(cfg.n_steps):
        proposal = current + rng.normal(0.0, scales)
        proposal_lp = _log_posterior(proposal, data, priors, model)
        log_u = math.log(rng.uniform())
        if proposal_lp - current_lp > log_u:
            current, current_lp = proposal, proposal_lp
            best_lp = max(best_lp, current_lp)
            if step < burn:
                accepted_window += 1
            else:
                accepted_retained += 1
        chain[step] = current

        if step < burn and (step + 1) % cfg.adapt_interval == 0:
            rate = accepted_window / cfg.adapt_interval
            scales = scales * math.exp(2.0 * (rate - cfg.target_acceptance))
            accepted_window = 0
            logger.debug("step %d: burn-in acceptance %.2f, scales %s", step + 1, rate, scales)

    retained = chain[burn :: cfg.thin]
    acceptance = accepted_retained / max(cfg.n_steps - burn, 1)
    flags = _diagnostic_flags(retained, acceptance, priors)
    for flag in flags:
        logger.warning("MCMC diagnostic: %s", flag)

    intervals = np.percentile(retained, CREDIBLE_QUANTILES, axis=0).T
    posterior = Posterior(
        names=PARAMETER_NAMES,
        samples=retained,
        means=retained.mean(axis=0),
        stds=retained.std(axis=0, ddof=1),
        intervals=intervals,
        acceptance_rate=acceptance,
        start=start,
        flags=tuple(flags),
        max_log_likelihood=best_lp,
        extra={"seed": cfg.seed, "n_steps": cfg.n_steps, "burn_in_steps": burn},
    )
    logger.info(
        "MCMC done: n_th=%.3g(%.2g) n_coh=%.3g(%.2g) acceptance=%.2f",
        posterior.means[0],
        posterior.stds[0],
        posterior.means[1],
        posterior.stds[1],
        acceptance,
    )
    return posterior


def synthesize_dataset(
    truth: RabiParameters,
    transitions: Sequence[int],
    times: Sequence[float],
    shots: int = 200,
    seed: int = 0,
    eta: float = 0.23,
    expected: bool = False,
) -> RabiDataset:
    """
    Draw binomial counts from the forward model.

    Args:
        truth: Parameters generating the data
        transitions: Measured dn values
        times: Pulse times [s], shared by every transition
        shots: Repetitions per setting
        seed: Generator seed
        eta: Lamb-Dicke factor
        expected: Store expected counts instead of random draws

    Returns:
        RabiDataset ordered by transition then time
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(seed)
    distribution = displaced_thermal(truth.state)
    drive = RabiModel(omega=truth.omega, eta=eta)
    times = np.asarray(times, dtype=float)
    records: List[RabiRecord] = []
    for dn in transitions:
        p = np.clip(rabi_signal(distribution, drive, dn, times), 0.0, 1.0)
        counts = shots * p if expected else rng.binomial(shots, p)
        for t, k in zip(times, counts):
            successes = float(k) if expected else int(k)
            records.append(RabiRecord(dn=int(dn), t=float(t), successes=successes, shots=shots))
    return RabiDataset(records=tuple(records))


@dataclass(frozen=True)
class CoverageReport:
    """Fraction of 68% credible intervals containing the truth, per parameter."""

    n_datasets: int
    hits: Dict[str, int]

    def fraction(self, name: str) -> float:
        return self.hits[name] / self.n_datasets

    def to_dict(self) -> Dict[str, object]:
        return {
            "n_datasets": self.n_datasets,
            "coverage": {name: self.fraction(name) for name in self.hits},
        }


def coverage_study(
    truth: RabiParameters,
    transitions: Sequence[int],
    times: Sequence[float],
    priors: PriorSpec,
    cfg: McmcConfig,
    model: RabiModel,
    n_datasets: int = 100,
    shots: int = 200,
) -> CoverageReport:
    """
    Repeat synthesize -> run_mcmc and count interval hits.

    Dataset i uses seed cfg.seed + i for both the draw and the chain.
    """
    if n_datasets < 1:
        raise ValueError("n_datasets must be positive")
    hits = {name: 0 for name in PARAMETER_NAMES}
    truth_values = truth.as_array()
    for i in range(n_datasets):
        seed = cfg.seed + i
        data = synthesize_dataset(truth, transitions, times, shots=shots, seed=seed, eta=model.eta)
        chain_cfg = McmcConfig(
            seed=seed,
            n_steps=cfg.n_steps,
            burn_in=cfg.burn_in,
            step_scales=cfg.step_scales,
            thin=cfg.thin,
            adapt_interval=cfg.adapt_interval,
            target_acceptance=cfg.target_acceptance,
        )
        posterior = run_mcmc(data, priors, chain_cfg, model)
        for j, name in enumerate(PARAMETER_NAMES):
            lower, upper = posterior.intervals[j]
            if lower <= truth_values[j] <= upper:
                hits[name] += 1
    report = CoverageReport(n_datasets=n_datasets, hits=hits)
    logger.info("Coverage over %d datasets: %s", n_datasets, report.to_dict()["coverage"])
    return report
