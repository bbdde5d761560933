"""
Laser-induced charging of the trap, the PI tilt-compensation servo and the
search for the dU_O window in which separation succeeds.

Charging is tracked as the equivalent compensation voltage U [mV]. While the
photoionization lasers are on, U relaxes towards K' / (delta + kappa_dis); while
they are off it decays at kappa_dis.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from ionsplit.calibrate import FitResult
from ionsplit.constants import ZEPTONEWTON, PhysicalConstants
from ionsplit.dynamics import (
    Classification,
    SeparationDesign,
    SeparationOutcome,
    SimConfig,
    quasistatic_outcome,
    run_separation,
    scan,
)
from ionsplit.errors import (
    DivergenceError,
    IdentifiabilityError,
    IonsplitError,
    UnderdeterminedFitError,
    UsageError,
    WindowNotFoundError,
    range_error,
)
from ionsplit.logging_config import log_operation

logger = logging.getLogger(__name__)

CHARGING_NAMES = ("K_prime", "delta", "kappa_dis", "U0")
MIN_WINDOW_GRID = 8
DIVERGENCE_LIMIT_MV = 1e6

Evaluator = Callable[[SeparationDesign], SeparationOutcome]


@dataclass(frozen=True)
class ChargingParams:
    """
    Charging model in compensation-voltage units.

    Attributes:
        K_prime: Charging rate while the lasers are on [mV/min]
        delta: Screening rate while the lasers are on [1/min]
        kappa_dis: Discharge rate, always active [1/min]
        linear_drift: Additional constant drift, always active [mV/min]
    """

    K_prime: float
    delta: float = 0.0
    kappa_dis: float = 0.0
    linear_drift: float = 0.0

    def __post_init__(self) -> None:
        for name in ("K_prime", "delta", "kappa_dis"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")

    @property
    def on_rate(self) -> float:
        return self.delta + self.kappa_dis

    @property
    def asymptote(self) -> float:
        """Saturation voltage under continuous illumination [mV]; inf when nothing limits it."""
        if self.on_rate == 0:
            return math.inf if self.K_prime + self.linear_drift > 0 else 0.0
        return (self.K_prime + self.linear_drift) / self.on_rate

    @property
    def half_life(self) -> float:
        """Dark discharge half-life [min]."""
        return math.log(2.0) / self.kappa_dis if self.kappa_dis > 0 else math.inf

    @classmethod
    def preset(cls, name: str) -> "ChargingParams":
        try:
            return CHARGING_PRESETS[name]
        except KeyError:
            known = ", ".join(sorted(CHARGING_PRESETS))
            raise UsageError(
                message=f"Unknown charging preset {name!r} (known: {known})",
                details={"preset": name},
            ) from None

    @classmethod
    def from_fit(cls, fit: FitResult, linear_drift: float = 0.0) -> "ChargingParams":
        return cls(
            K_prime=fit["K_prime"],
            delta=fit["delta"],
            kappa_dis=fit["kappa_dis"],
            linear_drift=linear_drift,
        )

    def to_dict(self) -> Dict[str, float]:
        return {
            "K_prime_mV_per_min": self.K_prime,
            "delta_per_min": self.delta,
            "kappa_dis_per_min": self.kappa_dis,
            "linear_drift_mV_per_min": self.linear_drift,
        }


# Remote loading saturates; direct loading was only seen to charge linearly.
CHARGING_PRESETS: Dict[str, ChargingParams] = {
    "remote_375nm": ChargingParams(K_prime=3.02, delta=0.074, kappa_dis=0.017),
    "direct_375nm": ChargingParams(K_prime=4.8),
    "direct_423nm": ChargingParams(K_prime=5.25),
}


@dataclass(frozen=True)
class LaserSchedule:
    """
    Photoionization laser on-intervals [min] within the span [start, end].

    Attributes:
        on_intervals: Increasing, non-overlapping (begin, end) pairs
        start: Beginning of the modeled span
        end: End of the modeled span (defaults to the last on-interval end)
    """

    on_intervals: Tuple[Tuple[float, float], ...] = ()
    start: float = 0.0
    end: Optional[float] = None

    def __post_init__(self) -> None:
        intervals = tuple((float(a), float(b)) for a, b in self.on_intervals)
        object.__setattr__(self, "on_intervals", intervals)
        previous = self.start
        for begin, finish in intervals:
            if not begin < finish:
                raise ValueError(f"Laser interval ({begin}, {finish}) must have begin < end")
            if begin < previous:
                raise ValueError("Laser intervals must be increasing and non-overlapping")
            previous = finish
        if self.end is None:
            object.__setattr__(self, "end", previous if intervals else self.start)
        if self.end < previous:
            raise ValueError("Schedule end precedes the last laser interval")

    @classmethod
    def on_then_off(cls, on_duration: float, off_duration: float) -> "LaserSchedule":
        return cls(on_intervals=((0.0, on_duration),), end=on_duration + off_duration)

    @property
    def span(self) -> Tuple[float, float]:
        return self.start, float(self.end)

    def segments(self) -> List[Tuple[float, float, bool]]:
        """Contiguous (begin, end, laser_on) pieces covering the span."""
        pieces: List[Tuple[float, float, bool]] = []
        cursor = self.start
        for begin, finish in self.on_intervals:
            if begin > cursor:
                pieces.append((cursor, begin, False))
            pieces.append((begin, finish, True))
            cursor = finish
        if self.end > cursor:
            pieces.append((cursor, float(self.end), False))
        return pieces

    def is_on(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        on = np.zeros(t.shape, dtype=bool)
        for begin, finish in self.on_intervals:
            on |= (t >= begin) & (t < finish)
        return on

    def to_dict(self) -> Dict[str, object]:
        return {
            "on_intervals_min": [list(pair) for pair in self.on_intervals],
            "start_min": self.start,
            "end_min": self.end,
        }


@dataclass(frozen=True, eq=False)
class ChargingTrace:
    """Compensation-voltage equivalent U [mV] at times [min]."""

    times: np.ndarray
    U: np.ndarray
    laser_on: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if np.shape(self.times) != np.shape(self.U):
            raise ValueError("times and U must have equal shape")


@dataclass(frozen=True)
class TiltState:
    """
    A stray axial field expressed both as compensation voltage and as field.

    Attributes:
        U: Compensation voltage equivalent [mV]
        gamma_O: Tilt coefficient of the outer segments [1/m]
    """

    U: float
    gamma_O: float = 333.0

    @classmethod
    def from_field(cls, gamma_prime: float, gamma_O: float = 333.0) -> "TiltState":
        return cls(U=1e3 * gamma_prime / gamma_O, gamma_O=gamma_O)

    @property
    def gamma_prime(self) -> float:
        """Tilt field [V/m]."""
        return self.gamma_O * self.U * 1e-3

    def force(self, c: PhysicalConstants) -> float:
        """Force on one ion [N]."""
        return c.elementary_charge * self.gamma_prime


@dataclass(frozen=True)
class ServoConfig:
    """
    Digital PI loop on the tilt compensation voltage.

    Each update applies u <- u + kp r + ki sum(r) with r the measured residual.

    Attributes:
        kp: Proportional gain
        ki: Integral gain
        period: Update period [s]
        noise: Measurement noise 1 sigma [mV]
        tolerance: Error band used for the settling time [mV]
    """

    kp: float = 0.7
    ki: float = 0.005
    period: float = 0.5
    noise: float = 0.6
    tolerance: float = 0.6

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ValueError("Servo period must be positive")
        if self.noise < 0 or self.tolerance <= 0:
            raise ValueError("noise must be >= 0 and tolerance > 0")


@dataclass(frozen=True, eq=False)
class ServoTrace:
    """Per-update record of the servo loop; errors and corrections in mV."""

    times: np.ndarray
    true_offset: np.ndarray
    correction: np.ndarray
    error: np.ndarray
    measured: np.ndarray
    active: np.ndarray
    tolerance: float

    @property
    def n_steps(self) -> int:
        return int(self.times.size)

    @property
    def settling_step(self) -> Optional[int]:
        """First step after which |error| stays within tolerance, or None."""
        outside = np.flatnonzero(np.abs(self.error) > self.tolerance)
        if outside.size == 0:
            return 0
        last = int(outside[-1])
        return last + 1 if last + 1 < self.n_steps else None

    @property
    def settling_time(self) -> Optional[float]:
        step = self.settling_step
        return None if step is None else float(self.times[step])

    @property
    def steady_state_error(self) -> float:
        """RMS error over the final fifth of the run [mV]."""
        tail = self.error[-max(1, self.n_steps // 5) :]
        return float(np.sqrt(np.mean(tail * tail)))

    def summary(self) -> Dict[str, object]:
        return {
            "n_steps": self.n_steps,
            "settling_step": self.settling_step,
            "settling_time_s": self.settling_time,
            "steady_state_error_mV": self.steady_state_error,
            "tolerance_mV": self.tolerance,
        }


@dataclass(frozen=True)
class TiltWindow:
    """
    dU_O interval [V] in which separation ends with one ion per well.

    gamma_crit = gamma_O * half_width and force = q * gamma_crit.
    """

    lower: float
    upper: float
    gamma_O: float
    force: float
    bracketed: Tuple[bool, bool] = (True, True)
    evaluations: int = 0
    grid: Tuple[float, ...] = ()
    classifications: Tuple[str, ...] = field(default=(), repr=False)

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    @property
    def gamma_crit(self) -> float:
        return self.gamma_O * self.half_width

    def to_dict(self) -> Dict[str, object]:
        return {
            "lower_V": self.lower,
            "upper_V": self.upper,
            "center_V": self.center,
            "half_width_V": self.half_width,
            "gamma_O_per_m": self.gamma_O,
            "gamma_crit_V_per_m": self.gamma_crit,
            "force_N": self.force,
            "force_zN": self.force / ZEPTONEWTON,
            "bracketed": list(self.bracketed),
            "evaluations": self.evaluations,
            "grid_V": list(self.grid),
            "classifications": list(self.classifications),
        }


def _propagate(u0, source, rate, dt):
    """Solution of dU/dt = source - rate U after dt, valid for rate = 0."""
    rate = np.asarray(rate, dtype=float)
    dt = np.asarray(dt, dtype=float)
    safe = np.where(rate > 0, rate, 1.0)
    growth = np.where(rate > 0, -np.expm1(-rate * dt) / safe, dt)
    return u0 * np.exp(-rate * dt) + source * growth


def _segment_rates(
    params: ChargingParams, segments: Sequence[Tuple[float, float, bool]]
) -> Tuple[np.ndarray, np.ndarray]:
    source = np.array(
        [params.linear_drift + (params.K_prime if on else 0.0) for _, _, on in segments]
    )
    rate = np.array([params.kappa_dis + (params.delta if on else 0.0) for _, _, on in segments])
    return source, rate


def simulate_charging(
    params: ChargingParams, sched: LaserSchedule, U0: float, times: Sequence[float]
) -> ChargingTrace:
    """
    Piecewise closed-form charging trace.

    Args:
        params: Charging rates
        sched: Laser schedule [min]
        U0: Compensation voltage at the schedule start [mV]
        times: Evaluation times inside the schedule span [min]

    Returns:
        ChargingTrace with the laser state at each time

    Raises:
        RangeError: A time lies outside the schedule span
    """
    t = np.asarray(times, dtype=float)
    begin, end = sched.span
    outside = (t < begin) | (t > end)
    if np.any(outside):
        raise range_error("time_min", float(t[outside][0]), begin, end)
    segments = sched.segments()
    if not segments:
        return ChargingTrace(t, np.full(t.shape, float(U0)), sched.is_on(t))

    source, rate = _segment_rates(params, segments)
    starts = np.array([s[0] for s in segments])
    lengths = np.array([s[1] - s[0] for s in segments])
    boundary = np.empty(len(segments))
    boundary[0] = U0
    for i in range(1, len(segments)):
        boundary[i] = _propagate(boundary[i - 1], source[i - 1], rate[i - 1], lengths[i - 1])

    index = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(segments) - 1)
    values = _propagate(boundary[index], source[index], rate[index], t - starts[index])
    return ChargingTrace(t, np.asarray(values, dtype=float), sched.is_on(t))


def fit_charging(
    trace: ChargingTrace,
    sched: LaserSchedule,
    sigma: Optional[float] = None,
    initial: Optional[ChargingParams] = None,
    linear_drift: float = 0.0,
) -> FitResult:
    """
    Nonlinear least-squares fit of (K_prime, delta, kappa_dis, U0) to a charging trace.

    Uncertainties come from the Jacobian at the optimum. Without sigma the
    covariance is scaled by the residual variance.

    Raises:
        IdentifiabilityError: The trace lacks an on or an off interval, or the
            Jacobian is rank deficient
        UnderdeterminedFitError: Fewer points than parameters
    """
    t = np.asarray(trace.times, dtype=float)
    u = np.asarray(trace.U, dtype=float)
    n_params = len(CHARGING_NAMES)
    if t.size < n_params:
        raise UnderdeterminedFitError(
            message=f"{t.size} point(s) cannot determine {n_params} charging parameters",
            details={"points": int(t.size)},
        )
    on = sched.is_on(t)
    if on.sum() < 2 or (~on).sum() < 2:
        raise IdentifiabilityError(
            message="Charging fit needs at least one laser-on and one laser-off interval",
            details={"on_points": int(on.sum()), "off_points": int((~on).sum())},
        )

    start = initial or CHARGING_PRESETS["remote_375nm"]
    x0 = np.array([start.K_prime, start.delta, start.kappa_dis, float(u[0])])
    weight = 1.0 / sigma if sigma and sigma > 0 else 1.0

    def residuals(x: np.ndarray) -> np.ndarray:
        params = ChargingParams(
            K_prime=x[0], delta=x[1], kappa_dis=x[2], linear_drift=linear_drift
        )
        return (simulate_charging(params, sched, x[3], t).U - u) * weight

    result = optimize.least_squares(
        residuals,
        x0,
        bounds=([0.0, 0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf, np.inf]),
        x_scale="jac",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=2000,
    )

    jac = result.jac
    col_scale = np.linalg.norm(jac, axis=0)
    col_scale[col_scale == 0] = 1.0
    singular = linalg.svdvals(jac / col_scale)
    if singular[-1] < 1e-8 * singular[0]:
        raise IdentifiabilityError(
            message="Charging rates are not identifiable from this trace",
            details={"condition": float(singular[0] / max(singular[-1], 1e-300))},
        )

    rss = float(np.sum(result.fun**2))
    dof = int(t.size - n_params)
    scaled_cov = linalg.pinvh((jac / col_scale).T @ (jac / col_scale))
    covariance = scaled_cov / np.outer(col_scale, col_scale)
    if not (sigma and sigma > 0) and dof > 0:
        covariance = covariance * (rss / dof)
    uncertainties = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    logger.debug(
        "Charging fit: K'=%.4g delta=%.4g kappa=%.4g (nfev=%d, status=%d)",
        result.x[0],
        result.x[1],
        result.x[2],
        result.nfev,
        result.status,
    )
    return FitResult(
        names=CHARGING_NAMES,
        values=tuple(float(v) for v in result.x),
        uncertainties=tuple(float(s) for s in uncertainties),
        rss=rss,
        dof=dof,
        covariance=tuple(tuple(float(v) for v in row) for row in covariance),
    )


def closed_loop_poles(cfg: ServoConfig) -> np.ndarray:
    """
    Poles of the servo against a static offset.

    State (e_k, S_{k-1}) with e the error and S the running residual sum.
    """
    if cfg.ki == 0:
        return np.array([1.0 - cfg.kp])
    transition = np.array([[1.0 - cfg.kp - cfg.ki, -cfg.ki], [1.0, 1.0]])
    return linalg.eigvals(transition)


def check_servo_stability(cfg: ServoConfig) -> float:
    """
    Spectral radius of the closed loop.

    Raises:
        DivergenceError: Radius >= 1
    """
    radius = float(np.max(np.abs(closed_loop_poles(cfg))))
    if radius >= 1.0:
        raise DivergenceError(
            message=f"Servo gains kp={cfg.kp}, ki={cfg.ki} are unstable (pole radius {radius:.4f})",
            details={"kp": cfg.kp, "ki": cfg.ki, "spectral_radius": radius},
        )
    return radius


def simulate_servo(
    cfg: ServoConfig,
    n_steps: int,
    offset: float = 0.0,
    charging: Optional[ChargingParams] = None,
    schedule: Optional[LaserSchedule] = None,
    start_min: float = 0.0,
    pauses: Sequence[Tuple[int, int]] = (),
    seed: Optional[int] = None,
    measure: Optional[Callable[[float, np.random.Generator], float]] = None,
    initial_correction: float = 0.0,
) -> ServoTrace:
    """
    Run the tilt-compensation loop against a static or charging offset.

    The measurement is the residual offset seen in the center-of-mass displacement
    of a slow separation, linearized around zero tilt, plus Gaussian noise.

    Args:
        cfg: Servo gains and timing
        n_steps: Number of updates
        offset: Static offset, or the initial charging voltage when charging is set [mV]
        charging: Optional drift model
        schedule: Laser schedule for the drift model [min]
        start_min: Schedule time of step 0 [min]
        pauses: (first, stop) step ranges in which no update is applied
        seed: Noise generator seed
        measure: Replaces the measurement, called with (true residual, generator)
        initial_correction: Correction before the first update [mV]

    Raises:
        DivergenceError: Unstable gains or a runaway error
    """
    if n_steps < 1:
        raise UsageError(message="Servo needs at least one step")
    radius = check_servo_stability(cfg)
    rng = np.random.default_rng(seed)
    times = np.arange(n_steps) * cfg.period

    if charging is not None:
        sched = schedule or LaserSchedule(end=start_min + times[-1] / 60.0, start=start_min)
        true_offset = simulate_charging(charging, sched, offset, start_min + times / 60.0).U
    else:
        true_offset = np.full(n_steps, float(offset))

    active = np.ones(n_steps, dtype=bool)
    for first, stop in pauses:
        active[max(0, first) : max(0, stop)] = False

    correction = np.empty(n_steps)
    error = np.empty(n_steps)
    measured = np.full(n_steps, np.nan)
    u = float(initial_correction)
    accumulated = 0.0
    for k in range(n_steps):
        e = float(true_offset[k] - u)
        if not math.isfinite(e) or abs(e) > DIVERGENCE_LIMIT_MV:
            raise DivergenceError(
                message=f"Servo error diverged at step {k}",
                details={"step": k, "error_mV": e, "kp": cfg.kp, "ki": cfg.ki},
            )
        correction[k] = u
        error[k] = e
        if not active[k]:
            continue
        r = measure(e, rng) if measure else e + (rng.normal(0.0, cfg.noise) if cfg.noise else 0.0)
        measured[k] = r
        accumulated += r
        u += cfg.kp * r + cfg.ki * accumulated

    trace = ServoTrace(
        times=times,
        true_offset=true_offset,
        correction=correction,
        error=error,
        measured=measured,
        active=active,
        tolerance=cfg.tolerance,
    )
    logger.info(
        "Servo: %d steps, pole radius %.4f, settled at step %s, steady-state %.3f mV",
        n_steps,
        radius,
        trace.settling_step,
        trace.steady_state_error,
    )
    return trace


def full_dynamics_evaluator(cfg: SimConfig) -> Evaluator:
    """Evaluator running the complete filtered dynamics."""

    def evaluate(design: SeparationDesign) -> SeparationOutcome:
        return run_separation(design, cfg).outcome

    return evaluate


def _success_runs(success: np.ndarray) -> List[Tuple[int, int]]:
    runs: List[Tuple[int, int]] = []
    start = None
    for i, ok in enumerate(success.tolist() + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            runs.append((start, i - 1))
            start = None
    return runs


def find_tilt_window(
    design: SeparationDesign,
    grid: Optional[Sequence[float]] = None,
    span: Tuple[float, float] = (-0.05, 0.05),
    n_points: int = 17,
    tolerance: float = 0.1e-3,
    evaluator: Optional[Evaluator] = None,
    threads: int = 1,
) -> TiltWindow:
    """
    Locate the dU_O window in which the separation ends Separated.

    A grid scan brackets the window, then each edge is bisected until the
    bracket is narrower than tolerance. Window edges are bracket midpoints.

    Args:
        design: Base design; its ramp.dU_O is replaced
        grid: Explicit dU_O grid [V] (overrides span and n_points)
        span: Grid range [V]
        n_points: Grid size, at least 8
        tolerance: Bisection bracket width [V]
        evaluator: Outcome for one design (default quasistatic_outcome)
        threads: Concurrent evaluations

    Returns:
        TiltWindow

    Raises:
        UsageError: Grid smaller than 8 points
        WindowNotFoundError: No grid point separates
    """
    values = np.asarray(grid, dtype=float) if grid is not None else np.linspace(*span, n_points)
    if values.size < MIN_WINDOW_GRID:
        raise UsageError(
            message=f"Tilt window search needs at least {MIN_WINDOW_GRID} grid points",
            details={"points": int(values.size)},
        )
    if not tolerance > 0:
        raise UsageError(message="Bisection tolerance must be positive")
    values = np.sort(values)
    evaluate_design = evaluator or quasistatic_outcome

    def separated(dU_O: float) -> bool:
        try:
            outcome = evaluate_design(design.with_axis("dU_O", dU_O))
        except IonsplitError as exc:
            logger.debug("dU_O=%.4g mV failed: %s", dU_O * 1e3, exc.message)
            return False
        return outcome.classification is Classification.SEPARATED

    def bisect(outside: float, inside: float) -> Tuple[float, int]:
        calls = 0
        while abs(inside - outside) > tolerance:
            middle = 0.5 * (inside + outside)
            calls += 1
            if separated(middle):
                inside = middle
            else:
                outside = middle
        return 0.5 * (inside + outside), calls

    with log_operation(logger, "tilt_window", points=int(values.size)) as context:
        result = scan(
            "dU_O", values, design, SimConfig(), threads=threads, evaluator=evaluate_design
        )
        classes = result.classifications()
        success = np.array([c is Classification.SEPARATED for c in classes])
        runs = _success_runs(success)
        if not runs:
            raise WindowNotFoundError(
                message="No dU_O on the grid yields a separated pair",
                details={
                    "grid_V": values.tolist(),
                    "classifications": [c.value for c in classes],
                },
            )
        if len(runs) > 1:
            logger.warning("Found %d disjoint success runs; using the widest", len(runs))
        first, last = max(runs, key=lambda r: (r[1] - r[0], -abs(values[r[0]] + values[r[1]])))

        edges = []
        if first > 0:
            edges.append((values[first - 1], values[first]))
        if last < values.size - 1:
            edges.append((values[last + 1], values[last]))
        if threads > 1 and len(edges) > 1:
            with ThreadPoolExecutor(max_workers=2) as pool:
                refined = list(pool.map(lambda pair: bisect(*pair), edges))
        else:
            refined = [bisect(*pair) for pair in edges]

        evaluations = int(values.size) + sum(calls for _, calls in refined)
        lower = refined.pop(0)[0] if first > 0 else float(values[0])
        upper = refined.pop(0)[0] if last < values.size - 1 else float(values[-1])
        context["lower_mV"] = lower * 1e3
        context["upper_mV"] = upper * 1e3

    gamma_O = design.basis.gamma_O
    half_width = 0.5 * (upper - lower)
    window = TiltWindow(
        lower=float(lower),
        upper=float(upper),
        gamma_O=gamma_O,
        force=design.constants.elementary_charge * gamma_O * half_width,
        bracketed=(first > 0, last < values.size - 1),
        evaluations=evaluations,
        grid=tuple(values.tolist()),
        classifications=tuple(c.value for c in classes),
    )
    if not all(window.bracketed):
        logger.warning("Tilt window reaches the grid edge; gamma_crit is a lower bound")
    logger.info(
        "Tilt window [%.3f, %.3f] mV, gamma_crit=%.3g V/m, force=%.0f zN",
        window.lower * 1e3,
        window.upper * 1e3,
        window.gamma_crit,
        window.force / ZEPTONEWTON,
    )
    return window
