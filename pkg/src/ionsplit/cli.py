"""
Command-line entry point.

Every command loads the configuration (``--config``, ``--set`` overrides),
writes its outputs below ``--out-dir`` and finishes with a ``manifest.json``
recording the config hash, seed and files. Errors are printed as JSON on
stderr and mapped to exit codes 2 (usage), 3 (numeric) and 4 (I/O).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ionsplit import __version__
from ionsplit import io as files
from ionsplit.calibrate import fit_alpha, fit_beta, fit_heating_power_law
from ionsplit.config import BasisSection, ProjectConfig, load_project_config
from ionsplit.drift import (
    ChargingParams,
    find_tilt_window,
    fit_charging,
    full_dynamics_evaluator,
    simulate_charging,
    simulate_servo,
)
from ionsplit.dynamics import (
    SCAN_AXES,
    mass_rescaled_excitation,
    run_separation,
    quasistatic_outcome,
    scan,
    thermal_budget,
)
from ionsplit.errors import EXIT_OK, IonsplitError, UsageError, format_error
from ionsplit.estimate import McmcConfig, RabiParameters, run_mcmc, synthesize_dataset
from ionsplit.hardware import ContinuousVoltage, apply_filter, quantize
from ionsplit.logging_config import configure_logging, log_operation
from ionsplit.phonons import displaced_thermal, rabi_signal
from ionsplit.rampgen import build_waveform, frequency_trace, reverse_waveform
from ionsplit.trapmodel import SegmentBasis

logger = logging.getLogger(__name__)

# Scan axes are given on the command line in these units.
AXIS_UNITS = {"T": ("us", 1e-6), "dU_O": ("mV", 1e-3), "dU_C_cp": ("mV", 1e-3)}
DEMO_TRANSITIONS = (0, 1, -1)


@dataclass
class RunContext:
    args: argparse.Namespace
    config: ProjectConfig
    out_dir: Path
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return int(self.args.seed)

    def input(self, path: str) -> Path:
        self.inputs.append(str(path))
        return Path(path)

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(str(path))
        return path

    def emit(self, payload: Dict[str, Any]) -> None:
        print(files.dumps_json(payload), end="")


def _design_waveform(ctx: RunContext):
    design = ctx.config.to_design()
    waveform = build_waveform(
        design.trajectory, design.mesh, design.ramp, design.basis, design.constants
    )
    if design.awg is not None:
        waveform = quantize(waveform, design.awg)
    return design, waveform


def cmd_design(ctx: RunContext) -> int:
    design, waveform = _design_waveform(ctx)
    if ctx.args.reverse:
        waveform = reverse_waveform(waveform)
    files.write_waveform(ctx.output("waveform.csv"), waveform)
    ctx.outputs.append(str(files.waveform_sidecar(ctx.out_dir / "waveform.csv")))

    trace = frequency_trace(waveform, design.basis, design.constants)
    files.write_frequency_trace(ctx.output("frequency_trace.csv"), trace)
    n_thermal = thermal_budget(trace.times, trace.omega, ctx.config.to_heating())

    summary: Dict[str, Any] = {
        "n_samples": waveform.n_samples,
        "duration_s": waveform.duration,
        "cp_index": waveform.cp_index,
        "min_frequency_index": trace.minimum_index,
        "min_frequency_Hz": float(trace.omega[trace.minimum_index] / (2 * math.pi)),
        "thermal_budget_phonons": n_thermal,
    }
    if waveform.cp_index is not None:
        summary["cp_voltages_V"] = waveform.voltage_set(waveform.cp_index).as_dict()

    if not ctx.args.no_preview:
        settle = ctx.config.simulation.settle_time_us * 1e-6
        if design.filter is not None:
            cv = apply_filter(
                waveform, design.filter, ctx.config.simulation.oversample, hold_after=settle
            )
        else:
            cv = ContinuousVoltage.from_waveform(waveform, hold_after=settle)
        files.write_voltage_trace(ctx.output("filtered.csv"), cv)
        summary["filtered_extrema_V"] = {k: list(v) for k, v in cv.extrema().items()}

    files.write_json(ctx.output("design.json"), summary)
    ctx.emit(summary)
    return EXIT_OK


def _axis_grid(args: argparse.Namespace) -> np.ndarray:
    _, scale = AXIS_UNITS[args.axis]
    if args.values:
        grid = np.array(args.values, dtype=float)
    elif args.start is not None and args.stop is not None:
        grid = np.linspace(args.start, args.stop, args.num)
    else:
        raise UsageError(message="Give the axis grid as --values or --start/--stop/--num")
    if grid.size == 0:
        raise UsageError(message="Scan grid is empty")
    return grid * scale


def cmd_scan(ctx: RunContext) -> int:
    args = ctx.args
    grid = _axis_grid(args)
    design = ctx.config.to_design()
    fit_range = None
    if args.fit_range:
        fit_range = (args.fit_range[0] * 1e-6, args.fit_range[1] * 1e-6)
    result = scan(
        args.axis,
        grid,
        design,
        ctx.config.to_sim_config(),
        heat=ctx.config.to_heating(),
        fit_range=fit_range,
        threads=args.threads,
        evaluator=quasistatic_outcome if args.quasistatic else None,
    )
    files.write_scan(ctx.output("scan.csv"), result)
    summary = {
        "axis": args.axis,
        "axis_unit": "SI (s or V)",
        "points": len(result.points),
        "failed": sum(1 for p in result.points if p.outcome is None),
        "classifications": [c.value for c in result.classifications()],
        "fit": result.fit.to_dict() if result.fit else None,
    }
    files.write_json(ctx.output("scan_fit.json"), summary)
    ctx.emit(summary)
    return EXIT_OK


def cmd_simulate(ctx: RunContext) -> int:
    design = ctx.config.to_design()
    run = run_separation(design, ctx.config.to_sim_config())
    trace = frequency_trace(run.waveform, design.basis, design.constants)
    n_thermal = thermal_budget(trace.times, trace.omega, ctx.config.to_heating())
    mean_coh = 0.5 * sum(run.outcome.n_coh)
    summary = {
        "outcome": run.outcome.to_dict(),
        "ramp_duration_s": run.ramp_duration,
        "n_thermal": n_thermal,
        "n_tot": [n + n_thermal for n in run.outcome.n_coh],
        "n_tot_as_9Be+": mass_rescaled_excitation(
            mean_coh + n_thermal, design.constants.species, "9Be+"
        ),
    }
    if ctx.args.trajectory_stride:
        files.write_trajectory(
            ctx.output("trajectory.csv"), run.trajectory.decimated(ctx.args.trajectory_stride)
        )
    files.write_json(ctx.output("outcome.json"), summary)
    ctx.emit(summary)
    return EXIT_OK


def _with_steps(cfg: McmcConfig, steps: int) -> McmcConfig:
    try:
        return replace(cfg, n_steps=steps)
    except ValueError as exc:
        raise UsageError(message=f"Invalid chain length {steps}: {exc}") from exc


def cmd_estimate(ctx: RunContext) -> int:
    data = files.read_rabi_dataset(ctx.input(ctx.args.dataset))
    cfg = ctx.config.to_mcmc(ctx.seed)
    if ctx.args.steps:
        cfg = _with_steps(cfg, ctx.args.steps)
    with log_operation(logger, "mcmc", steps=cfg.n_steps, records=len(data)):
        posterior = run_mcmc(data, ctx.config.to_prior(), cfg, ctx.config.to_rabi_model())
    payload = posterior.to_dict(include_samples=ctx.args.samples)
    payload["seed"] = ctx.seed
    files.write_json(ctx.output("posterior.json"), payload)
    ctx.emit({k: v for k, v in payload.items() if k != "samples"})
    return EXIT_OK


def _load_basis(ctx: RunContext) -> SegmentBasis:
    if ctx.args.basis:
        return SegmentBasis.from_dict(files.read_json(ctx.input(ctx.args.basis)))
    return ctx.config.to_basis()


def cmd_fit(ctx: RunContext) -> int:
    args = ctx.args
    c = ctx.config.to_constants()
    payload: Dict[str, Any] = {"kind": args.kind}
    if args.kind == "alpha":
        basis = _load_basis(ctx)
        fit = fit_alpha(files.read_frequency_scans(ctx.input(args.data)), c, basis)
        updated = basis.updated(**fit.as_basis_update())
    elif args.kind == "beta":
        basis = _load_basis(ctx)
        fit = fit_beta(files.read_distance_scan(ctx.input(args.data)), basis, c)
        updated = basis.updated(**fit.as_basis_update())
    elif args.kind == "heating":
        points, sigmas = files.read_heating_points(ctx.input(args.data))
        model = fit_heating_power_law(points, sigmas)
        payload["heating"] = model.to_dict()
        updated = None
    else:
        trace = files.read_charging_trace(ctx.input(args.data))
        fit = fit_charging(trace, ctx.config.to_schedule(), sigma=args.sigma)
        payload["charging"] = ChargingParams.from_fit(fit).to_dict()
        payload["fit"] = fit.to_dict()
        updated = None

    if args.kind in ("alpha", "beta"):
        payload["fit"] = fit.to_dict()
        payload["basis"] = updated.to_dict()
        if args.basis_out:
            files.write_json(Path(args.basis_out), updated.to_dict())
            ctx.outputs.append(str(args.basis_out))
            payload["basis_config"] = BasisSection.from_basis(updated).model_dump()
    files.write_json(ctx.output(f"fit_{args.kind}.json"), payload)
    ctx.emit(payload)
    return EXIT_OK


def cmd_drift(ctx: RunContext) -> int:
    args = ctx.args
    cfg = ctx.config
    if args.action == "charge":
        params = cfg.to_charging()
        schedule = cfg.to_schedule()
        begin, end = schedule.span
        times = np.arange(begin, end + 1e-9, cfg.drift.trace_step_min)
        trace = simulate_charging(params, schedule, cfg.drift.initial_U_mV, times)
        files.write_charging_trace(ctx.output("charging.csv"), trace)
        summary: Dict[str, Any] = {
            "params": params.to_dict(),
            "schedule": schedule.to_dict(),
            "asymptote_mV": params.asymptote,
            "dark_half_life_min": params.half_life,
            "final_U_mV": float(trace.U[-1]),
        }
    elif args.action == "fit":
        trace = files.read_charging_trace(ctx.input(args.trace))
        fit = fit_charging(trace, cfg.to_schedule(), sigma=args.sigma)
        summary = {"fit": fit.to_dict(), "params": ChargingParams.from_fit(fit).to_dict()}
    elif args.action == "servo":
        servo = cfg.to_servo()
        charging = cfg.to_charging() if args.with_charging else None
        trace = simulate_servo(
            servo,
            args.steps or cfg.servo.n_steps,
            offset=cfg.servo.offset_mV,
            charging=charging,
            schedule=cfg.to_schedule() if charging else None,
            seed=ctx.seed,
        )
        files.write_servo_trace(ctx.output("servo.csv"), trace)
        summary = trace.summary()
    else:
        design = cfg.to_design()
        design = design.with_axis("T", cfg.drift.window_duration_us * 1e-6)
        evaluator = (
            full_dynamics_evaluator(cfg.to_sim_config())
            if cfg.drift.window_evaluator == "dynamics"
            else quasistatic_outcome
        )
        window = find_tilt_window(
            design,
            span=(cfg.drift.window_span_mV[0] * 1e-3, cfg.drift.window_span_mV[1] * 1e-3),
            n_points=cfg.drift.window_points,
            tolerance=cfg.drift.window_tolerance_mV * 1e-3,
            evaluator=evaluator,
            threads=args.threads,
        )
        summary = window.to_dict()
    files.write_json(ctx.output(f"drift_{args.action}.json"), summary)
    ctx.emit(summary)
    return EXIT_OK


def cmd_demo(ctx: RunContext) -> int:
    """Design, simulate, synthesize Rabi data from the result and estimate it back."""
    design = ctx.config.to_design()
    run = run_separation(design, ctx.config.to_sim_config())
    files.write_waveform(ctx.output("waveform.csv"), run.waveform)
    trace = frequency_trace(run.waveform, design.basis, design.constants)
    n_thermal = thermal_budget(trace.times, trace.omega, ctx.config.to_heating())

    model = ctx.config.to_rabi_model()
    truth = RabiParameters(
        n_th=n_thermal, n_coh=0.5 * sum(run.outcome.n_coh), omega=model.omega
    )
    times = np.linspace(0.0, 60e-6, 31)
    data = synthesize_dataset(
        truth, DEMO_TRANSITIONS, times, shots=200, seed=ctx.seed, eta=model.eta
    )
    files.write_rabi_dataset(ctx.output("rabi_data.csv"), data)

    distribution = displaced_thermal(truth.state)
    files.write_distribution(ctx.output("distribution.csv"), distribution)
    files.write_rabi_traces(
        ctx.output("rabi_traces.csv"),
        {dn: (times, rabi_signal(distribution, model, dn, times)) for dn in DEMO_TRANSITIONS},
    )

    cfg = _with_steps(ctx.config.to_mcmc(ctx.seed), ctx.args.steps)
    posterior = run_mcmc(data, ctx.config.to_prior(), cfg, model)
    summary = {
        "outcome": run.outcome.to_dict(),
        "truth": {"n_th": truth.n_th, "n_coh": truth.n_coh, "omega": truth.omega},
        "posterior": posterior.to_dict(),
    }
    files.write_json(ctx.output("demo.json"), summary)
    ctx.emit(summary)
    return EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", help="Config file (default: $IONSPLIT_CONFIG_PATH or config.yaml)"
    )
    common.add_argument("--seed", type=int, default=0, help="Random seed (default 0)")
    common.add_argument("--out-dir", default="out", help="Output directory (default ./out)")
    common.add_argument("--threads", type=int, default=1, help="Concurrent evaluations")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a config value (repeatable)",
    )
    common.add_argument("--log-level", help="Override logging.level")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="ionsplit", description="Fast two-ion separation: design, simulate, estimate."
    )
    parser.add_argument("--version", action="version", version=f"ionsplit {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    design_parser = subparsers.add_parser(
        "design", parents=[common], help="Build, quantize and export the separation waveform"
    )
    design_parser.add_argument("--reverse", action="store_true", help="Emit the merge waveform")
    design_parser.add_argument(
        "--no-preview", action="store_true", help="Skip the filtered voltage preview"
    )
    design_parser.set_defaults(func=cmd_design)

    scan_parser = subparsers.add_parser(
        "scan", parents=[common], help="Scan T [us], dU_O [mV] or dU_C_cp [mV]"
    )
    scan_parser.add_argument("--axis", choices=SCAN_AXES, required=True)
    scan_parser.add_argument("--values", type=float, nargs="*", help="Explicit grid")
    scan_parser.add_argument("--start", type=float)
    scan_parser.add_argument("--stop", type=float)
    scan_parser.add_argument("--num", type=int, default=9)
    scan_parser.add_argument(
        "--fit-range", type=float, nargs=2, metavar=("T_MIN", "T_MAX"), help="Fit window [us]"
    )
    scan_parser.add_argument(
        "--quasistatic", action="store_true", help="Use the equilibrium-branch evaluator"
    )
    scan_parser.set_defaults(func=cmd_scan)

    simulate_parser = subparsers.add_parser(
        "simulate", parents=[common], help="Simulate one separation"
    )
    simulate_parser.add_argument(
        "--trajectory-stride", type=int, default=0, help="Write every Nth trajectory step"
    )
    simulate_parser.set_defaults(func=cmd_simulate)

    estimate_parser = subparsers.add_parser(
        "estimate", parents=[common], help="Bayesian estimate of n_th, n_coh and Omega"
    )
    estimate_parser.add_argument("dataset", help="Rabi CSV (dn, t_us, successes, shots)")
    estimate_parser.add_argument("--steps", type=int, help="Override estimate.n_steps")
    estimate_parser.add_argument(
        "--samples", type=int, default=0, help="Embed this many thinned samples"
    )
    estimate_parser.set_defaults(func=cmd_estimate)

    fit_parser = subparsers.add_parser("fit", parents=[common], help="Calibration fits")
    fit_parser.add_argument("kind", choices=("alpha", "beta", "heating", "charging"))
    fit_parser.add_argument("data", help="Calibration CSV")
    fit_parser.add_argument("--basis", help="Basis JSON to start from (default: config)")
    fit_parser.add_argument("--basis-out", help="Write the updated basis JSON here")
    fit_parser.add_argument("--sigma", type=float, help="Charging measurement noise [mV]")
    fit_parser.set_defaults(func=cmd_fit)

    drift_parser = subparsers.add_parser(
        "drift", parents=[common], help="Charging, servo and tilt-window tools"
    )
    drift_parser.add_argument("action", choices=("charge", "fit", "servo", "window"))
    drift_parser.add_argument("trace", nargs="?", help="Charging CSV for the fit action")
    drift_parser.add_argument("--sigma", type=float, help="Charging measurement noise [mV]")
    drift_parser.add_argument("--steps", type=int, help="Servo updates")
    drift_parser.add_argument(
        "--with-charging", action="store_true", help="Drive the servo with the charging model"
    )
    drift_parser.set_defaults(func=cmd_drift)

    demo_parser = subparsers.add_parser(
        "demo", parents=[common], help="Design, simulate and estimate on synthetic data"
    )
    demo_parser.add_argument("--steps", type=int, default=4000, help="MCMC steps")
    demo_parser.set_defaults(func=cmd_demo)
    return parser


def _validate_args(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise UsageError(message="--threads must be at least 1")
    if args.command == "drift" and args.action == "fit" and not args.trace:
        raise UsageError(message="drift fit needs a charging trace CSV")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    started_at = datetime.now(timezone.utc).isoformat()
    start = time.perf_counter()
    ctx: Optional[RunContext] = None
    exit_code = EXIT_OK
    try:
        _validate_args(args)
        config = load_project_config(args.config, args.set)
        configure_logging(
            level=args.log_level or config.logging.level,
            console_format=config.logging.format,
            log_file=config.logging.file,
        )
        ctx = RunContext(args=args, config=config, out_dir=Path(args.out_dir))
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        with log_operation(logger, args.command, seed=args.seed):
            exit_code = args.func(ctx)
    except IonsplitError as exc:
        print(json.dumps(format_error(exc), sort_keys=True), file=sys.stderr)
        exit_code = exc.exit_code
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        logger.exception("Unexpected numeric failure")
        payload = format_error(exc)
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        exit_code = payload["exit_code"]

    if ctx is not None:
        manifest = files.RunManifest(
            subcommand=args.command,
            config_hash=ctx.config.config_hash(),
            seed=args.seed,
            started_at=started_at,
            toolkit_version=__version__,
            argv=argv,
            inputs=ctx.inputs,
            outputs=ctx.outputs,
            wall_clock_s=round(time.perf_counter() - start, 6),
            status="ok" if exit_code == EXIT_OK else "error",
            exit_code=exit_code,
        )
        try:
            files.write_manifest(ctx.out_dir, manifest)
        except IonsplitError as exc:
            print(json.dumps(format_error(exc), sort_keys=True), file=sys.stderr)
            exit_code = exit_code or exc.exit_code
    return exit_code


if __name__ == "__main__":
    raise SystemExit(main())
