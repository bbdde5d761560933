"""
File formats: canonical CSV tables, JSON documents and run manifests.

CSV floats are written with ``.12g`` and columns in a fixed order so that
re-running a command with the same seed and config reproduces its files byte
for byte. Malformed rows raise ParseError with the 1-based file line.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import jsonschema
import numpy as np

from ionsplit.calibrate import DistanceScan, FrequencyScan
from ionsplit.drift import ChargingTrace, ServoTrace
from ionsplit.dynamics import ScanResult, Trajectory
from ionsplit.errors import DataIOError, ParseError, parse_error
from ionsplit.estimate import RabiDataset, RabiRecord
from ionsplit.hardware import ContinuousVoltage
from ionsplit.phonons import PhononDistribution
from ionsplit.rampgen import CHANNELS, FrequencyTrace, TrajectorySpec, Waveform
from ionsplit.trapmodel import VoltageSet

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".12g"
WAVEFORM_COLUMNS = ("index", "t_s", "U_C_V", "U_S_V", "U_O_V", "dU_O_V", "reduced_accuracy")
FREQUENCY_SCAN_COLUMNS = ("segment", "voltage_V", "f_Hz", "sigma_Hz", "U_C_V", "U_S_V", "U_O_V")
DISTANCE_SCAN_COLUMNS = ("U_C_V", "U_S_V", "U_O_V", "distance_um", "sigma_um")
HEATING_COLUMNS = ("f_MHz", "rate_per_ms", "sigma_per_ms")
CHARGING_COLUMNS = ("t_min", "U_mV")
RABI_COLUMNS = ("dn", "t_us", "successes", "shots")
DISTRIBUTION_COLUMNS = ("n", "probability")
RABI_TRACE_COLUMNS = ("dn", "t_us", "probability")
SCAN_COLUMNS = (
    "value",
    "classification",
    "n_coh_1",
    "n_coh_2",
    "mean_n_coh",
    "n_thermal",
    "error_code",
)
SERVO_COLUMNS = ("step", "t_s", "error_mV", "correction_mV", "measured_mV", "active")
FREQUENCY_TRACE_COLUMNS = ("index", "t_s", "f_Hz", "distance_um", "reduced_accuracy")
VOLTAGE_TRACE_COLUMNS = ("t_s", "U_C_V", "U_S_V", "U_O_V", "dU_O_V")
TRAJECTORY_COLUMNS = ("t_s", "x1_m", "x2_m", "v1_m_per_s", "v2_m_per_s")

_ANNOTATION_KEYS = {
    "n_samples",
    "sample_period_s",
    "duration_s",
    "cp_index",
    "reversed",
    "reduced_accuracy_from",
    "trajectory",
}

T = TypeVar("T")

MANIFEST_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "subcommand",
        "config_hash",
        "seed",
        "inputs",
        "outputs",
        "started_at",
        "wall_clock_s",
        "toolkit_version",
        "argv",
    ],
    "properties": {
        "subcommand": {"type": "string", "minLength": 1},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": ["integer", "null"]},
        "inputs": {"type": "array", "items": {"type": "string"}},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "started_at": {"type": "string"},
        "wall_clock_s": {"type": "number", "minimum": 0},
        "toolkit_version": {"type": "string"},
        "argv": {"type": "array", "items": {"type": "string"}},
        "status": {"type": "string", "enum": ["ok", "error"]},
        "exit_code": {"type": "integer"},
    },
    "additionalProperties": False,
}


def format_value(value: Any) -> str:
    """Canonical text for one CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FORMAT)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise DataIOError(message=f"Cannot write {path}: {exc}", details={"path": str(path)})
    logger.debug("Wrote %s", path)
    return path


def read_csv(
    path: Path, required: Sequence[str], optional: Sequence[str] = ()
) -> List[Tuple[int, Dict[str, str]]]:
    """
    Read a headed CSV file.

    Returns:
        (line number, row) pairs; blank lines and lines starting with # are skipped

    Raises:
        DataIOError: File missing or unreadable
        ParseError: Missing columns or ragged rows
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        raise DataIOError(message=f"File not found: {path}", details={"path": str(path)})
    except OSError as exc:
        raise DataIOError(message=f"Cannot read {path}: {exc}", details={"path": str(path)})

    content = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    content = [(n, line) for n, line in content if not line.lstrip().startswith("#")]
    if not content:
        raise parse_error(path, 1, "file has no header")
    header_line, header_text = content[0]
    header = [name.strip() for name in next(csv.reader([header_text]))]
    missing = [name for name in required if name not in header]
    if missing:
        raise parse_error(path, header_line, f"missing column(s) {', '.join(missing)}")
    allowed = set(required) | set(optional)
    unknown = [name for name in header if name not in allowed]
    if unknown:
        raise parse_error(path, header_line, f"unknown column(s) {', '.join(unknown)}")

    rows: List[Tuple[int, Dict[str, str]]] = []
    for number, text in content[1:]:
        cells = next(csv.reader([text]))
        if len(cells) != len(header):
            raise parse_error(path, number, f"expected {len(header)} fields, got {len(cells)}")
        rows.append((number, {k: v.strip() for k, v in zip(header, cells)}))
    return rows


def _cell(
    path: Path, line: int, row: Dict[str, str], column: str, convert: Callable[[str], T]
) -> T:
    text = row.get(column, "")
    try:
        value = convert(text)
    except (TypeError, ValueError):
        raise parse_error(path, line, f"column {column}: cannot parse {text!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise parse_error(path, line, f"column {column}: non-finite value {text!r}")
    return value


def _optional_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def _flag(text: str) -> bool:
    if text in ("1", "true", "True"):
        return True
    if text in ("0", "false", "False", ""):
        return False
    raise ValueError(text)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(dumps_json(payload), encoding="utf-8")
    except OSError as exc:
        raise DataIOError(message=f"Cannot write {path}: {exc}", details={"path": str(path)})
    logger.debug("Wrote %s", path)
    return path


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataIOError(message=f"File not found: {path}", details={"path": str(path)})
    except OSError as exc:
        raise DataIOError(message=f"Cannot read {path}: {exc}", details={"path": str(path)})
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise parse_error(path, exc.lineno, exc.msg) from None


# Waveforms


def waveform_sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def write_waveform(path: Path, w: Waveform) -> Tuple[Path, Path]:
    """Write the samples as CSV and the annotations as a JSON sidecar."""
    reduced = w.reduced_accuracy if w.reduced_accuracy is not None else np.zeros(w.n_samples)
    rows = (
        (k, t, w.U_C[k], w.U_S[k], w.U_O[k], w.dU_O[k], bool(reduced[k]))
        for k, t in enumerate(w.times)
    )
    csv_path = write_csv(path, WAVEFORM_COLUMNS, rows)
    json_path = write_json(waveform_sidecar(path), w.annotations())
    return csv_path, json_path


def read_waveform(path: Path) -> Waveform:
    """Read a waveform CSV and, when present, its sidecar."""
    path = Path(path)
    rows = read_csv(path, WAVEFORM_COLUMNS[1:6], optional=("index", "reduced_accuracy"))
    if not rows:
        raise parse_error(path, 2, "waveform has no samples")
    values = {
        name: np.array([_cell(path, n, r, f"{name}_V", float) for n, r in rows])
        for name in CHANNELS
    }
    times = np.array([_cell(path, n, r, "t_s", float) for n, r in rows])
    reduced = np.array([_cell(path, n, r, "reduced_accuracy", _flag) for n, r in rows])

    annotations: Dict[str, Any] = {}
    sidecar = waveform_sidecar(path)
    if sidecar.exists():
        annotations = read_json(sidecar)
    if "sample_period_s" in annotations:
        period = float(annotations["sample_period_s"])
    elif times.size > 1:
        period = float(np.median(np.diff(times)))
    else:
        raise parse_error(path, 2, "single-sample waveform needs a sidecar with sample_period_s")

    trajectory = None
    if annotations.get("trajectory"):
        t = annotations["trajectory"]
        trajectory = TrajectorySpec(
            d_i=t["d_i_m"],
            d_f=t["d_f_m"],
            T=t["T_s"],
            truncate_head=t["truncate_head"],
            truncate_tail=t["truncate_tail"],
        )
    metadata = {k: v for k, v in annotations.items() if k not in _ANNOTATION_KEYS}
    try:
        return Waveform(
            sample_period=period,
            cp_index=annotations.get("cp_index"),
            reduced_accuracy=reduced,
            trajectory=trajectory,
            is_reversed=bool(annotations.get("reversed", False)),
            metadata=metadata,
            **values,
        )
    except ValueError as exc:
        raise parse_error(path, 1, str(exc)) from None


def write_voltage_trace(path: Path, cv: ContinuousVoltage, stride: int = 1) -> Path:
    """Filtered (or interpolated) segment voltages at their time nodes."""
    idx = np.arange(0, cv.times.size, max(1, stride))
    rows = (
        (cv.times[i], *(cv.channels[name][i] for name in CHANNELS)) for i in idx.tolist()
    )
    return write_csv(path, VOLTAGE_TRACE_COLUMNS, rows)


def write_frequency_trace(path: Path, trace: FrequencyTrace) -> Path:
    rows = (
        (k, trace.times[k], trace.omega[k] / (2 * math.pi), trace.distance[k] * 1e6, flag)
        for k, flag in enumerate(trace.reduced_accuracy.tolist())
    )
    return write_csv(path, FREQUENCY_TRACE_COLUMNS, rows)


def write_trajectory(path: Path, trajectory: Trajectory) -> Path:
    rows = zip(trajectory.times, trajectory.x1, trajectory.x2, trajectory.v1, trajectory.v2)
    return write_csv(path, TRAJECTORY_COLUMNS, rows)


# Calibration data


def read_frequency_scans(path: Path) -> List[FrequencyScan]:
    """
    Frequencies are in Hz (f = omega / 2 pi). Rows are grouped into one scan per
    stepped segment and background voltage set, in file order.
    """
    path = Path(path)
    rows = read_csv(path, FREQUENCY_SCAN_COLUMNS)
    groups: Dict[Tuple[str, float, float, float], List[Tuple[float, float, float]]] = {}
    for n, r in rows:
        segment = r["segment"].upper()
        if segment not in ("C", "S", "O"):
            raise parse_error(path, n, f"unknown segment {r['segment']!r}")
        background = tuple(_cell(path, n, r, c, float) for c in ("U_C_V", "U_S_V", "U_O_V"))
        f = _cell(path, n, r, "f_Hz", float)
        sigma = _cell(path, n, r, "sigma_Hz", float)
        if f <= 0:
            raise parse_error(path, n, "frequency must be positive")
        key = (segment, *background)
        groups.setdefault(key, []).append((_cell(path, n, r, "voltage_V", float), f, sigma))
    scans = []
    for (segment, u_c, u_s, u_o), points in groups.items():
        scans.append(
            FrequencyScan(
                segment=segment,
                voltages=tuple(p[0] for p in points),
                omegas=tuple(2 * math.pi * p[1] for p in points),
                sigmas=tuple(2 * math.pi * p[2] for p in points),
                background=VoltageSet(U_C=u_c, U_S=u_s, U_O=u_o),
            )
        )
    return scans


def write_frequency_scans(path: Path, scans: Sequence[FrequencyScan]) -> Path:
    rows = []
    for scan in scans:
        for u, omega, sigma in zip(scan.voltages, scan.omegas, scan.sigmas):
            bg = scan.background
            f, f_sigma = omega / (2 * math.pi), sigma / (2 * math.pi)
            rows.append((scan.segment, u, f, f_sigma, bg.U_C, bg.U_S, bg.U_O))
    return write_csv(path, FREQUENCY_SCAN_COLUMNS, rows)


def read_distance_scan(path: Path) -> DistanceScan:
    path = Path(path)
    rows = read_csv(path, DISTANCE_SCAN_COLUMNS)
    sets, distances, sigmas = [], [], []
    for n, r in rows:
        sets.append(
            VoltageSet(
                U_C=_cell(path, n, r, "U_C_V", float),
                U_S=_cell(path, n, r, "U_S_V", float),
                U_O=_cell(path, n, r, "U_O_V", float),
            )
        )
        d = _cell(path, n, r, "distance_um", float)
        if d <= 0:
            raise parse_error(path, n, "distance must be positive")
        distances.append(d * 1e-6)
        sigmas.append(_cell(path, n, r, "sigma_um", float) * 1e-6)
    return DistanceScan(tuple(sets), tuple(distances), tuple(sigmas))


def write_distance_scan(path: Path, scan: DistanceScan) -> Path:
    rows = (
        (v.U_C, v.U_S, v.U_O, d * 1e6, s * 1e6)
        for v, d, s in zip(scan.voltage_sets, scan.distances, scan.sigmas)
    )
    return write_csv(path, DISTANCE_SCAN_COLUMNS, rows)


def read_heating_points(
    path: Path,
) -> Tuple[List[Tuple[float, float]], Optional[List[float]]]:
    """(omega [rad/s], rate [1/ms]) pairs and the rate sigmas (None if any is missing)."""
    path = Path(path)
    rows = read_csv(path, HEATING_COLUMNS[:2], optional=HEATING_COLUMNS[2:])
    points, sigmas = [], []
    for n, r in rows:
        f = _cell(path, n, r, "f_MHz", float)
        points.append((2 * math.pi * f * 1e6, _cell(path, n, r, "rate_per_ms", float)))
        sigmas.append(_cell(path, n, r, "sigma_per_ms", _optional_float))
    usable = all(s is not None and s > 0 for s in sigmas)
    return points, ([float(s) for s in sigmas] if usable else None)  # type: ignore[arg-type]


def write_heating_points(
    path: Path, points: Sequence[Tuple[float, float]], sigmas: Optional[Sequence[float]] = None
) -> Path:
    sig = list(sigmas) if sigmas is not None else [None] * len(points)
    rows = ((omega / (2 * math.pi * 1e6), rate, s) for (omega, rate), s in zip(points, sig))
    return write_csv(path, HEATING_COLUMNS, rows)


def read_charging_trace(path: Path) -> ChargingTrace:
    path = Path(path)
    rows = read_csv(path, CHARGING_COLUMNS, optional=("laser_on",))
    times = np.array([_cell(path, n, r, "t_min", float) for n, r in rows])
    values = np.array([_cell(path, n, r, "U_mV", float) for n, r in rows])
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise parse_error(path, rows[0][0], "t_min must be strictly increasing")
    return ChargingTrace(times=times, U=values)


def write_charging_trace(path: Path, trace: ChargingTrace) -> Path:
    if trace.laser_on is None:
        return write_csv(path, CHARGING_COLUMNS, zip(trace.times, trace.U))
    rows = zip(trace.times, trace.U, trace.laser_on.tolist())
    return write_csv(path, (*CHARGING_COLUMNS, "laser_on"), rows)


def write_servo_trace(path: Path, trace: ServoTrace) -> Path:
    rows = (
        (
            k,
            trace.times[k],
            trace.error[k],
            trace.correction[k],
            None if np.isnan(trace.measured[k]) else trace.measured[k],
            bool(trace.active[k]),
        )
        for k in range(trace.n_steps)
    )
    return write_csv(path, SERVO_COLUMNS, rows)


# Phonon data


def read_rabi_dataset(path: Path) -> RabiDataset:
    """Pulse times are in microseconds."""
    path = Path(path)
    rows = read_csv(path, RABI_COLUMNS)
    records = []
    for n, r in rows:
        successes = _cell(path, n, r, "successes", float)
        shots = _cell(path, n, r, "shots", int)
        try:
            records.append(
                RabiRecord(
                    dn=_cell(path, n, r, "dn", int),
                    t=_cell(path, n, r, "t_us", float) * 1e-6,
                    successes=successes,
                    shots=shots,
                )
            )
        except ValueError as exc:
            raise parse_error(path, n, str(exc)) from None
    return RabiDataset(tuple(records))


def write_rabi_dataset(path: Path, data: RabiDataset) -> Path:
    rows = ((r.dn, r.t * 1e6, r.successes, r.shots) for r in data.records)
    return write_csv(path, RABI_COLUMNS, rows)


def write_distribution(path: Path, p: PhononDistribution) -> Path:
    return write_csv(path, DISTRIBUTION_COLUMNS, zip(p.levels.tolist(), p.probabilities))


def read_distribution(path: Path) -> PhononDistribution:
    path = Path(path)
    rows = read_csv(path, DISTRIBUTION_COLUMNS)
    levels = [_cell(path, n, r, "n", int) for n, r in rows]
    if levels != list(range(len(levels))):
        raise parse_error(path, rows[0][0] if rows else 1, "levels must be 0, 1, 2, ...")
    try:
        return PhononDistribution(
            np.array([_cell(path, n, r, "probability", float) for n, r in rows])
        )
    except ValueError as exc:
        raise parse_error(path, 1, str(exc)) from None


def write_rabi_traces(
    path: Path, traces: Dict[int, Tuple[np.ndarray, np.ndarray]]
) -> Path:
    rows = (
        (dn, t * 1e6, prob)
        for dn in sorted(traces)
        for t, prob in zip(*traces[dn])
    )
    return write_csv(path, RABI_TRACE_COLUMNS, rows)


# Scans


def write_scan(path: Path, result: ScanResult) -> Path:
    rows = []
    for p in result.points:
        n1, n2 = p.outcome.n_coh if p.outcome else (None, None)
        error_code = p.error.get("error_code") if p.error else None
        rows.append(
            (p.value, p.classification.value, n1, n2, p.mean_n_coh, p.n_thermal, error_code)
        )
    return write_csv(path, SCAN_COLUMNS, rows)


# Run manifests


@dataclass
class RunManifest:
    """Provenance record written next to every command's outputs."""

    subcommand: str
    config_hash: str
    seed: Optional[int]
    started_at: str
    toolkit_version: str
    argv: List[str] = field(default_factory=list)
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    status: str = "ok"
    exit_code: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def validate_manifest(payload: Dict[str, Any]) -> None:
    try:
        jsonschema.validate(instance=payload, schema=MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataIOError(
            message=f"Run manifest failed validation: {exc.message}",
            details={"path": list(exc.absolute_path)},
        ) from None


def write_manifest(directory: Path, manifest: RunManifest) -> Path:
    payload = manifest.to_dict()
    validate_manifest(payload)
    return write_json(Path(directory) / "manifest.json", payload)


def read_manifest(path: Path) -> RunManifest:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise ParseError(message=f"{path}: manifest must be a JSON object")
    validate_manifest(payload)
    return RunManifest(**payload)
