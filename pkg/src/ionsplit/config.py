"""
Project configuration for ionsplit.

``config.yaml`` is parsed with ``yaml.safe_load`` and validated by the pydantic
sections below. Every numeric key carries its unit in the name; the ``to_*``
builders convert to SI and return the domain objects the modules consume.

The raw file is cached in memory and reloaded when its mtime changes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import threading
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import yaml
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ionsplit.calibrate import HeatingModel
from ionsplit.constants import ION_MASSES_U, PhysicalConstants
from ionsplit.drift import ChargingParams, LaserSchedule, ServoConfig
from ionsplit.dynamics import INTEGRATORS, SeparationDesign, SimConfig
from ionsplit.errors import ConfigError
from ionsplit.estimate import McmcConfig, PriorSpec
from ionsplit.hardware import DISCRETIZATIONS, AwgSpec, FilterSpec
from ionsplit.phonons import RabiModel
from ionsplit.rampgen import RampConfig, RampMesh, TrajectorySpec
from ionsplit.trapmodel import (
    COEFFICIENT_NAMES,
    REFERENCE_UNCERTAINTIES,
    SegmentBasis,
    VoltageSet,
)

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIG_PATH = PROJECT_ROOT / "config.yaml"
CONFIG_ENV_VAR = "IONSPLIT_CONFIG_PATH"

_config_cache: Optional[Dict[str, Any]] = None
_config_key: Optional[Tuple[str, Optional[float]]] = None
_config_lock = threading.Lock()

T = TypeVar("T")

BASIS_KEYS: Dict[str, str] = {
    "alpha_C": "alpha_C_per_m2",
    "alpha_S": "alpha_S_per_m2",
    "alpha_O": "alpha_O_per_m2",
    "alpha_prime": "alpha_prime_V_per_m2",
    "beta_C": "beta_C_per_m4",
    "beta_S": "beta_S_per_m4",
    "beta_O": "beta_O_per_m4",
    "beta_prime": "beta_prime_V_per_m4",
    "gamma_S": "gamma_S_per_m",
    "gamma_O": "gamma_O_per_m",
    "gamma_prime": "gamma_prime_V_per_m",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpeciesSection(_Section):
    name: str = Field(default="40Ca+", description="Ion species")

    @field_validator("name")
    @classmethod
    def known_species(cls, v: str) -> str:
        if v not in ION_MASSES_U:
            raise ValueError(f"unknown species {v!r}; known: {sorted(ION_MASSES_U)}")
        return v


class BasisSection(_Section):
    """Segment coefficients of the axial expansion."""

    alpha_C_per_m2: float = Field(default=-2.612e6, description="alpha_C [m^-2/V]")
    alpha_S_per_m2: float = Field(default=-1.279e6, description="alpha_S [m^-2/V]")
    alpha_O_per_m2: float = Field(default=0.993e6, description="alpha_O [m^-2/V]")
    alpha_prime_V_per_m2: float = Field(default=-1.956e6, description="Stray alpha [V/m^2]")
    beta_C_per_m4: float = Field(default=3.1e13, description="beta_C [m^-4/V]")
    beta_S_per_m4: float = Field(default=-6.2e12, description="beta_S [m^-4/V]")
    beta_O_per_m4: float = Field(default=0.0, description="beta_O [m^-4/V]")
    beta_prime_V_per_m4: float = Field(default=1.5e14, description="Stray beta [V/m^4]")
    gamma_S_per_m: float = Field(default=0.0, description="gamma_S [m^-1/V]")
    gamma_O_per_m: float = Field(default=333.0, description="gamma_O [m^-1/V]")
    gamma_prime_V_per_m: float = Field(default=0.0, description="Stray tilt field [V/m]")
    sigma: Dict[str, float] = Field(
        default_factory=lambda: dict(REFERENCE_UNCERTAINTIES),
        description="1 sigma per coefficient, keyed by coefficient name (alpha_C, ...)",
    )

    @field_validator("sigma")
    @classmethod
    def known_coefficients(cls, v: Dict[str, float]) -> Dict[str, float]:
        unknown = set(v) - set(COEFFICIENT_NAMES)
        if unknown:
            raise ValueError(f"sigma given for unknown coefficients {sorted(unknown)}")
        if any(s < 0 for s in v.values()):
            raise ValueError("sigma values must be non-negative")
        return v

    def coefficient_values(self) -> Dict[str, float]:
        return {name: getattr(self, key) for name, key in BASIS_KEYS.items()}

    @classmethod
    def from_basis(cls, basis: SegmentBasis) -> "BasisSection":
        values: Dict[str, Any] = {key: getattr(basis, name) for name, key in BASIS_KEYS.items()}
        return cls(**values, sigma=dict(basis.uncertainties))


class AwgSection(_Section):
    range_V: float = Field(default=10.0, gt=0, description="Output range +/- [V]")
    resolution_mV: float = Field(default=0.3, gt=0, description="Output step [mV]")
    max_rate_MSps: float = Field(default=2.5, gt=0, description="Update-rate limit [MS/s]")
    quantize: bool = Field(default=True, description="Round waveforms onto the AWG grid")


class FilterSection(_Section):
    enabled: bool = Field(default=True, description="Model the segment low-pass filters")
    cutoff_kHz: float = Field(default=50.0, gt=0, description="Cutoff f_c [kHz]")
    q: float = Field(default=1.0 / math.sqrt(2.0), gt=0, description="Quality factor")
    order: int = Field(default=2, description="Filter order (only 2 is modeled)")
    discretization: str = Field(default="zoh", description="zoh or bilinear")

    @field_validator("discretization")
    @classmethod
    def known_discretization(cls, v: str) -> str:
        if v not in DISCRETIZATIONS:
            raise ValueError(f"discretization must be one of {DISCRETIZATIONS}")
        return v


class TrajectorySection(_Section):
    d_initial_um: float = Field(default=4.45, gt=0, description="Initial ion distance [um]")
    d_final_um: float = Field(default=400.0, gt=0, description="Final ion distance [um]")
    duration_us: float = Field(default=80.0, gt=0, description="Emitted ramp duration [us]")
    truncate_head: float = Field(default=0.1, ge=0, lt=0.5, description="Head fraction cut")
    truncate_tail: float = Field(default=0.3, ge=0, lt=0.5, description="Tail fraction cut")


class MeshSection(_Section):
    start_U_C_V: float = Field(default=-7.0, description="Start center voltage [V]")
    start_U_S_V: float = Field(default=0.0, description="Start split voltage [V]")
    start_U_O_V: float = Field(default=0.0, description="Start outer voltage [V]")
    cp_U_S_V: float = Field(default=4.35, description="Split voltage at the CP [V]")
    cp_U_O_V: float = Field(default=9.0, description="Outer voltage at the CP [V]")
    end_U_S_V: float = Field(default=-7.83, description="Final split voltage [V]")
    end_U_O_V: float = Field(default=0.0, description="Final outer voltage [V]")
    alpha_end_V_per_m2: Optional[float] = Field(
        default=None, description="End harmonic coefficient (default: minus the start value)"
    )
    refined: bool = Field(default=False, description="Hold U_O at its CP value around the CP")


class RampSection(_Section):
    dU_C_cp_mV: float = Field(default=0.0, description="Center offset at the CP [mV]")
    dU_O_mV: float = Field(default=0.0, description="Tilt compensation voltage [mV]")
    sample_rate_MSps: float = Field(default=2.5, gt=0, description="Waveform rate [MS/s]")


class HeatingSection(_Section):
    prefactor_per_ms: float = Field(default=6.3, gt=0, description="a in a*omega^-p [1/ms]")
    prefactor_sigma_per_ms: float = Field(default=0.0, ge=0, description="1 sigma of a")
    exponent: float = Field(default=1.8, description="p in a*omega^-p (omega in 2 pi MHz)")
    exponent_sigma: float = Field(default=0.0, ge=0, description="1 sigma of p")


class SimulationSection(_Section):
    timestep_ns: float = Field(default=1.0, gt=0, description="Integrator step [ns]")
    integrator: str = Field(default="verlet", description="verlet or dop853")
    omega_ref_MHz: float = Field(default=1.4, gt=0, description="Phonon reference [2 pi MHz]")
    settle_time_us: float = Field(default=20.0, ge=0, description="Hold after the ramp [us]")
    tail_periods: float = Field(default=5.0, gt=0, description="Periods used for extraction")
    oversample: int = Field(default=20, ge=1, description="Filter steps per waveform sample")
    escape_factor: float = Field(default=3.0, gt=1, description="Escape radius multiple")
    validity_radius_um: float = Field(default=200.0, gt=0, description="Model validity [um]")

    @field_validator("integrator")
    @classmethod
    def known_integrator(cls, v: str) -> str:
        if v not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        return v


class DriftSection(_Section):
    preset: Optional[str] = Field(
        default="remote_375nm", description="Named charging preset; explicit rates override it"
    )
    K_prime_mV_per_min: Optional[float] = Field(default=None, ge=0, description="K' [mV/min]")
    delta_per_min: Optional[float] = Field(default=None, ge=0, description="Screening [1/min]")
    kappa_dis_per_min: Optional[float] = Field(
        default=None, ge=0, description="Discharge [1/min]"
    )
    linear_drift_mV_per_min: float = Field(default=0.0, description="Thermal drift [mV/min]")
    laser_on_min: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, 120.0)], description="Laser on-intervals [min]"
    )
    schedule_end_min: float = Field(default=240.0, gt=0, description="Schedule end [min]")
    trace_step_min: float = Field(default=1.0, gt=0, description="Trace sampling [min]")
    initial_U_mV: float = Field(default=0.0, description="U at the schedule start [mV]")
    window_span_mV: Tuple[float, float] = Field(
        default=(-50.0, 50.0), description="Tilt-window grid range [mV]"
    )
    window_points: int = Field(default=17, ge=8, description="Tilt-window grid size")
    window_tolerance_mV: float = Field(default=0.1, gt=0, description="Bisection width [mV]")
    window_evaluator: str = Field(default="quasistatic", description="quasistatic or dynamics")
    window_duration_us: float = Field(
        default=500.0, gt=0, description="Slow ramp duration used for the window search [us]"
    )

    @field_validator("window_evaluator")
    @classmethod
    def known_evaluator(cls, v: str) -> str:
        if v not in ("quasistatic", "dynamics"):
            raise ValueError("window_evaluator must be quasistatic or dynamics")
        return v


class ServoSection(_Section):
    kp: float = Field(default=0.7, description="Proportional gain")
    ki: float = Field(default=0.005, description="Integral gain")
    period_s: float = Field(default=0.5, gt=0, description="Update period [s]")
    noise_mV: float = Field(default=0.6, ge=0, description="Measurement noise [mV]")
    tolerance_mV: float = Field(default=0.6, gt=0, description="Settling band [mV]")
    n_steps: int = Field(default=40, ge=1, description="Updates per simulation")
    offset_mV: float = Field(default=20.0, description="Initial tilt offset [mV]")


class EstimateSection(_Section):
    rabi_frequency_kHz: float = Field(
        default=100.0, gt=0, description="Nominal bare Rabi frequency [2 pi kHz]"
    )
    eta: float = Field(default=0.23, gt=0, lt=1, description="Lamb-Dicke factor")
    n_steps: int = Field(default=50_000, ge=10, description="Chain length")
    burn_in: float = Field(default=0.2, ge=0, lt=1, description="Burn-in fraction")
    thin: int = Field(default=1, ge=1, description="Thinning stride")
    prior_cap: float = Field(default=1000.0, gt=0, description="Upper prior bound on n")
    omega_spread: float = Field(default=0.2, gt=0, lt=1, description="Relative omega prior")
    target_acceptance: float = Field(default=0.3, gt=0, lt=1, description="Adaptation target")


class LoggingSection(_Section):
    level: str = Field(default="INFO", description="Log level name")
    format: str = Field(default="text", description="Console format: text or json")
    file: Optional[str] = Field(default=None, description="Optional JSON-lines log file")

    @field_validator("format")
    @classmethod
    def known_format(cls, v: str) -> str:
        if v not in ("text", "json"):
            raise ValueError("format must be text or json")
        return v


def _build(kind: str, factory: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(
            message=f"Invalid {kind} configuration: {exc}", details={"section": kind}
        ) from exc


class ProjectConfig(_Section):
    """Validated project configuration."""

    species: SpeciesSection = Field(default_factory=SpeciesSection)
    basis: BasisSection = Field(default_factory=BasisSection)
    awg: AwgSection = Field(default_factory=AwgSection)
    filter: FilterSection = Field(default_factory=FilterSection)
    trajectory: TrajectorySection = Field(default_factory=TrajectorySection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    ramp: RampSection = Field(default_factory=RampSection)
    heating: HeatingSection = Field(default_factory=HeatingSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    drift: DriftSection = Field(default_factory=DriftSection)
    servo: ServoSection = Field(default_factory=ServoSection)
    estimate: EstimateSection = Field(default_factory=EstimateSection)
    logging: LoggingSection = Field(default_factory=LoggingSection)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ProjectConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as exc:
            errors = [
                {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"]}
                for err in exc.errors()
            ]
            summary = "; ".join(f"{e['loc']}: {e['msg']}" for e in errors[:5])
            raise ConfigError(
                message=f"Invalid configuration: {summary}", details={"errors": errors}
            ) from None

    @classmethod
    def from_yaml_text(cls, text: str) -> "ProjectConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(message=f"Configuration is not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(message="Configuration root must be a mapping")
        return cls.from_dict(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump."""
        canonical = json.dumps(
            self.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Sequence[str]) -> "ProjectConfig":
        if not overrides:
            return self
        return ProjectConfig.from_dict(apply_overrides(self.model_dump(mode="json"), overrides))

    # Builders (SI units out)

    def to_constants(self) -> PhysicalConstants:
        return PhysicalConstants.for_species(self.species.name)

    def to_basis(self) -> SegmentBasis:
        return _build(
            "basis",
            SegmentBasis,
            **self.basis.coefficient_values(),
            uncertainties=dict(self.basis.sigma),
        )

    def to_awg(self) -> AwgSpec:
        return _build(
            "awg",
            AwgSpec,
            range=self.awg.range_V,
            resolution=self.awg.resolution_mV * 1e-3,
            max_rate=self.awg.max_rate_MSps * 1e6,
        )

    def to_filter(self) -> Optional[FilterSpec]:
        if not self.filter.enabled:
            return None
        return _build(
            "filter",
            FilterSpec,
            cutoff=self.filter.cutoff_kHz * 1e3,
            q=self.filter.q,
            order=self.filter.order,
            discretization=self.filter.discretization,
        )

    def to_trajectory(self) -> TrajectorySpec:
        return _build(
            "trajectory",
            TrajectorySpec,
            d_i=self.trajectory.d_initial_um * 1e-6,
            d_f=self.trajectory.d_final_um * 1e-6,
            T=self.trajectory.duration_us * 1e-6,
            truncate_head=self.trajectory.truncate_head,
            truncate_tail=self.trajectory.truncate_tail,
        )

    def to_mesh(self, basis: Optional[SegmentBasis] = None) -> RampMesh:
        m = self.mesh
        return RampMesh.from_voltages(
            basis or self.to_basis(),
            start=VoltageSet(U_C=m.start_U_C_V, U_S=m.start_U_S_V, U_O=m.start_U_O_V),
            cp=(m.cp_U_S_V, m.cp_U_O_V),
            end=(m.end_U_S_V, m.end_U_O_V),
            alpha_end=m.alpha_end_V_per_m2,
            refined=m.refined,
        )

    def to_ramp(self) -> RampConfig:
        return _build(
            "ramp",
            RampConfig,
            dU_C_cp=self.ramp.dU_C_cp_mV * 1e-3,
            dU_O=self.ramp.dU_O_mV * 1e-3,
            sample_rate=self.ramp.sample_rate_MSps * 1e6,
            max_sample_rate=self.awg.max_rate_MSps * 1e6,
            voltage_limit=self.awg.range_V,
        )

    def to_heating(self) -> HeatingModel:
        return _build(
            "heating",
            HeatingModel,
            prefactor=self.heating.prefactor_per_ms,
            exponent=self.heating.exponent,
            prefactor_sigma=self.heating.prefactor_sigma_per_ms,
            exponent_sigma=self.heating.exponent_sigma,
        )

    def to_sim_config(self) -> SimConfig:
        s = self.simulation
        return _build(
            "simulation",
            SimConfig,
            timestep=s.timestep_ns * 1e-9,
            integrator=s.integrator,
            omega_ref=2.0 * math.pi * s.omega_ref_MHz * 1e6,
            settle_time=s.settle_time_us * 1e-6,
            tail_periods=s.tail_periods,
            oversample=s.oversample,
            escape_factor=s.escape_factor,
            validity_radius=s.validity_radius_um * 1e-6,
        )

    def to_design(self) -> SeparationDesign:
        basis = self.to_basis()
        return SeparationDesign(
            trajectory=self.to_trajectory(),
            mesh=self.to_mesh(basis),
            ramp=self.to_ramp(),
            basis=basis,
            constants=self.to_constants(),
            awg=self.to_awg() if self.awg.quantize else None,
            filter=self.to_filter(),
        )

    def to_charging(self) -> ChargingParams:
        d = self.drift
        base = ChargingParams.preset(d.preset) if d.preset else ChargingParams(K_prime=0.0)
        return _build(
            "drift",
            ChargingParams,
            K_prime=base.K_prime if d.K_prime_mV_per_min is None else d.K_prime_mV_per_min,
            delta=base.delta if d.delta_per_min is None else d.delta_per_min,
            kappa_dis=base.kappa_dis if d.kappa_dis_per_min is None else d.kappa_dis_per_min,
            linear_drift=d.linear_drift_mV_per_min,
        )

    def to_schedule(self) -> LaserSchedule:
        return _build(
            "drift",
            LaserSchedule,
            on_intervals=tuple(tuple(pair) for pair in self.drift.laser_on_min),
            end=self.drift.schedule_end_min,
        )

    def to_servo(self) -> ServoConfig:
        s = self.servo
        return _build(
            "servo",
            ServoConfig,
            kp=s.kp,
            ki=s.ki,
            period=s.period_s,
            noise=s.noise_mV,
            tolerance=s.tolerance_mV,
        )

    def rabi_omega(self) -> float:
        return 2.0 * math.pi * self.estimate.rabi_frequency_kHz * 1e3

    def to_rabi_model(self) -> RabiModel:
        return _build("estimate", RabiModel, omega=self.rabi_omega(), eta=self.estimate.eta)

    def to_prior(self) -> PriorSpec:
        return _build(
            "estimate",
            PriorSpec.around,
            self.rabi_omega(),
            cap=self.estimate.prior_cap,
            spread=self.estimate.omega_spread,
        )

    def to_mcmc(self, seed: int) -> McmcConfig:
        e = self.estimate
        return _build(
            "estimate",
            McmcConfig,
            seed=seed,
            n_steps=e.n_steps,
            burn_in=e.burn_in,
            thin=e.thin,
            target_acceptance=e.target_acceptance,
        )


_DEFAULT_CONFIG: Dict[str, Any] = ProjectConfig().model_dump(mode="json")


def resolve_config_path(path: Optional[os.PathLike] = None) -> Path:
    """Explicit path, then $IONSPLIT_CONFIG_PATH, then <project root>/config.yaml."""
    if path is not None:
        return Path(path)
    env_override = os.environ.get(CONFIG_ENV_VAR)
    if env_override:
        return Path(env_override)
    return CONFIG_PATH


def load_config(
    path: Optional[os.PathLike] = None, *, force_reload: bool = False
) -> Dict[str, Any]:
    """
    Load the raw configuration mapping with mtime-based caching.

    A missing default file falls back to built-in defaults; a missing explicit
    or environment-selected file is an error.

    Args:
        path: Explicit config file
        force_reload: Bypass the cache

    Returns:
        Configuration dictionary (always a deep copy)

    Raises:
        ConfigError: Explicit file missing, unreadable or not a YAML mapping
    """
    global _config_cache, _config_key

    config_path = resolve_config_path(path)
    explicit = path is not None or bool(os.environ.get(CONFIG_ENV_VAR))

    with _config_lock:
        try:
            mtime: Optional[float] = config_path.stat().st_mtime
        except FileNotFoundError:
            mtime = None
        except OSError as exc:
            raise ConfigError(message=f"Cannot stat config file {config_path}: {exc}") from exc

        key = (str(config_path), mtime)
        if not force_reload and _config_cache is not None and _config_key == key:
            return copy.deepcopy(_config_cache)

        if mtime is None:
            if explicit:
                raise ConfigError(
                    message=f"Config file not found: {config_path}",
                    details={"path": str(config_path)},
                )
            logger.info("Config file not found at %s, using built-in defaults", config_path)
            data: Dict[str, Any] = copy.deepcopy(_DEFAULT_CONFIG)
        else:
            try:
                with config_path.open("r", encoding="utf-8") as handle:
                    data = yaml.safe_load(handle) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(
                    message=f"Config file {config_path} is not valid YAML: {exc}",
                    details={"path": str(config_path)},
                ) from exc
            except OSError as exc:
                raise ConfigError(message=f"Cannot read config file {config_path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(
                    message=f"Config file {config_path} must contain a mapping",
                    details={"path": str(config_path)},
                )
            logger.debug("Config loaded from %s and cached", config_path)

        _config_cache = data
        _config_key = key
        return copy.deepcopy(data)


def clear_config_cache() -> None:
    """Forget the cached file so the next load_config() reads from disk."""
    global _config_cache, _config_key

    with _config_lock:
        _config_cache = None
        _config_key = None
        logger.debug("Configuration cache cleared")


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Merge ``section.key=value`` overrides into a config mapping.

    Values are parsed as YAML scalars (``duration_us=160`` is a number).

    Raises:
        ConfigError: Malformed override
    """
    for item in overrides:
        key, sep, _ = item.partition("=")
        if not sep or not key or "." not in key:
            raise ConfigError(
                message=f"Override {item!r} must look like section.key=value",
                details={"override": item},
            )
    try:
        merged = OmegaConf.merge(OmegaConf.create(data), OmegaConf.from_dotlist(list(overrides)))
    except OmegaConfBaseException as exc:
        raise ConfigError(message=f"Cannot apply overrides: {exc}") from exc
    return OmegaConf.to_container(merged, resolve=True)  # type: ignore[return-value]


def load_project_config(
    path: Optional[os.PathLike] = None, overrides: Sequence[str] = ()
) -> ProjectConfig:
    """Load, override and validate the project configuration."""
    data = load_config(path)
    if overrides:
        data = apply_overrides(data, overrides)
    return ProjectConfig.from_dict(data)


__all__ = [
    "CONFIG_PATH",
    "PROJECT_ROOT",
    "ProjectConfig",
    "apply_overrides",
    "clear_config_cache",
    "load_config",
    "load_project_config",
    "resolve_config_path",
]
