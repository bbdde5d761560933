"""
Tests for charging, the tilt servo and the tilt window search in src/ionsplit/drift.py
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from ionsplit.constants import ZEPTONEWTON
from ionsplit.drift import (
    CHARGING_PRESETS,
    ChargingParams,
    ChargingTrace,
    LaserSchedule,
    ServoConfig,
    TiltState,
    check_servo_stability,
    find_tilt_window,
    fit_charging,
    simulate_charging,
    simulate_servo,
)
from ionsplit.dynamics import Classification, SeparationOutcome, quasistatic_outcome
from ionsplit.errors import (
    DivergenceError,
    IdentifiabilityError,
    RangeError,
    UsageError,
    WindowNotFoundError,
)

REMOTE = CHARGING_PRESETS["remote_375nm"]
ON_OFF = LaserSchedule.on_then_off(120.0, 180.0)
FIT_TIMES = np.linspace(0.0, 300.0, 301)


def _fake_outcome(lower=-12e-3, upper=8e-3):
    """Separated inside [lower, upper], both ions pushed to one side outside it."""

    def evaluate(design):
        dU_O = design.ramp.dU_O
        if dU_O > upper:
            classification = Classification.BOTH_LEFT
        elif dU_O < lower:
            classification = Classification.BOTH_RIGHT
        else:
            classification = Classification.SEPARATED
        return SeparationOutcome(classification, n_coh=(0.0, 0.0), well_positions=(-1e-4, 1e-4))

    return evaluate


class TestChargingParams:
    """Tests for charging parameters and presets"""

    def test_asymptote_and_half_life(self):
        assert REMOTE.asymptote == pytest.approx(3.02 / 0.091)
        assert REMOTE.asymptote == pytest.approx(33.19, abs=0.01)
        assert REMOTE.half_life == pytest.approx(40.77, abs=0.01)

    def test_linear_presets_never_saturate(self):
        assert ChargingParams.preset("direct_423nm").asymptote == math.inf
        assert ChargingParams.preset("direct_375nm").half_life == math.inf

    def test_unknown_preset(self):
        with pytest.raises(UsageError):
            ChargingParams.preset("green")

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            ChargingParams(K_prime=1.0, delta=-0.1)


class TestLaserSchedule:
    """Tests for laser schedules"""

    def test_segments_cover_span(self):
        sched = LaserSchedule(on_intervals=((10.0, 20.0), (30.0, 40.0)), end=50.0)
        assert sched.segments() == [
            (0.0, 10.0, False),
            (10.0, 20.0, True),
            (20.0, 30.0, False),
            (30.0, 40.0, True),
            (40.0, 50.0, False),
        ]
        np.testing.assert_array_equal(sched.is_on([5.0, 10.0, 20.0, 35.0]), [0, 1, 0, 1])

    def test_invalid_intervals(self):
        with pytest.raises(ValueError):
            LaserSchedule(on_intervals=((5.0, 2.0),))
        with pytest.raises(ValueError):
            LaserSchedule(on_intervals=((0.0, 10.0), (5.0, 20.0)))
        with pytest.raises(ValueError):
            LaserSchedule(on_intervals=((0.0, 10.0),), end=5.0)


class TestSimulateCharging:
    """Tests for the closed-form charging trace"""

    def test_saturates_at_asymptote(self):
        sched = LaserSchedule(on_intervals=((0.0, 200.0),))
        trace = simulate_charging(REMOTE, sched, 0.0, [0.0, 200.0])
        assert trace.U[0] == 0.0
        assert trace.U[-1] == pytest.approx(REMOTE.asymptote, rel=1e-6)

    def test_dark_decay_half_life(self):
        sched = LaserSchedule(end=REMOTE.half_life)
        trace = simulate_charging(REMOTE, sched, 20.0, [0.0, REMOTE.half_life])
        assert trace.U[-1] == pytest.approx(10.0)
        assert not trace.laser_on.any()

    def test_continuous_across_switch_off(self):
        trace = simulate_charging(REMOTE, ON_OFF, 0.0, [120.0 - 1e-9, 120.0])
        assert trace.U[0] == pytest.approx(trace.U[1], abs=1e-6)

    def test_equal_sum_rates_give_identical_on_traces(self):
        sched = LaserSchedule(on_intervals=((0.0, 100.0),))
        times = np.linspace(0.0, 100.0, 51)
        first = simulate_charging(ChargingParams(3.02, 0.074, 0.017), sched, 0.0, times)
        second = simulate_charging(ChargingParams(3.02, 0.061, 0.030), sched, 0.0, times)
        np.testing.assert_allclose(first.U, second.U, rtol=1e-12)

    def test_time_outside_schedule(self):
        with pytest.raises(RangeError):
            simulate_charging(REMOTE, ON_OFF, 0.0, [301.0])

    def test_matches_integrated_rate_equation(self):
        """Test the piecewise closed form against DOP853 on each laser segment"""
        params = replace(REMOTE, linear_drift=0.3)
        on_times = np.linspace(0.0, 120.0, 61)
        off_times = np.linspace(120.0, 300.0, 91)
        trace = simulate_charging(params, ON_OFF, 5.0, np.concatenate([on_times, off_times]))

        def solve(source, rate, u0, times):
            return sp_integrate.solve_ivp(
                lambda t, u: source - rate * u,
                (times[0], times[-1]),
                [u0],
                method="DOP853",
                t_eval=times,
                rtol=1e-12,
                atol=1e-12,
            ).y[0]

        lit = solve(params.K_prime + 0.3, params.on_rate, 5.0, on_times)
        dark = solve(0.3, params.kappa_dis, lit[-1], off_times)
        np.testing.assert_allclose(trace.U, np.concatenate([lit, dark]), rtol=1e-9)


class TestFitCharging:
    """Tests for the nonlinear charging fit"""

    def test_noiseless_recovery(self):
        trace = simulate_charging(REMOTE, ON_OFF, 0.0, FIT_TIMES)
        fit = fit_charging(trace, ON_OFF, initial=ChargingParams(2.0, 0.05, 0.03))
        assert fit["K_prime"] == pytest.approx(3.02, rel=1e-6)
        assert fit["delta"] == pytest.approx(0.074, rel=1e-6)
        assert fit["kappa_dis"] == pytest.approx(0.017, rel=1e-6)
        assert fit["U0"] == pytest.approx(0.0, abs=1e-6)
        assert ChargingParams.from_fit(fit).asymptote == pytest.approx(REMOTE.asymptote)

    def test_noisy_fit_covers_truth(self):
        clean = simulate_charging(REMOTE, ON_OFF, 0.0, FIT_TIMES)
        rng = np.random.default_rng(4)
        noisy = ChargingTrace(clean.times, clean.U + rng.normal(0.0, 0.6, clean.U.size))
        fit = fit_charging(noisy, ON_OFF, sigma=0.6)
        assert fit.sigma("K_prime") < 0.15
        assert abs(fit["K_prime"] - 3.02) < 4 * fit.sigma("K_prime")

    def test_laser_on_only_not_identifiable(self):
        sched = LaserSchedule(on_intervals=((0.0, 100.0),))
        trace = simulate_charging(REMOTE, sched, 0.0, np.linspace(0.0, 100.0, 51))
        with pytest.raises(IdentifiabilityError):
            fit_charging(trace, sched)


class TestTiltState:
    """Tests for tilt conversions"""

    def test_force(self, constants):
        assert TiltState(16.0).force(constants) / ZEPTONEWTON == pytest.approx(853.6, abs=0.1)
        assert TiltState(0.3).force(constants) / ZEPTONEWTON == pytest.approx(16.0, abs=0.05)

    def test_field_round_trip(self):
        assert TiltState.from_field(0.5).U == pytest.approx(1e3 * 0.5 / 333.0)
        assert TiltState.from_field(0.5).gamma_prime == pytest.approx(0.5)


class TestServo:
    """Tests for the PI tilt servo"""

    def test_static_offset_converges(self):
        cfg = ServoConfig(kp=0.7, ki=0.005, noise=0.0)
        trace = simulate_servo(cfg, 50, offset=20.0)
        np.testing.assert_allclose(trace.error[:4], [20.0, 5.9, 1.6405, 0.35445], atol=1e-4)
        assert np.all(np.abs(trace.error[3:]) <= 0.6)
        assert trace.settling_step <= 10
        assert trace.summary()["n_steps"] == 50

    def test_unstable_gain_rejected(self):
        with pytest.raises(DivergenceError):
            simulate_servo(ServoConfig(kp=2.5, ki=0.0, noise=0.0), 10, offset=1.0)

    def test_overshooting_gain_still_shrinks(self):
        cfg = ServoConfig(kp=1.5, ki=0.0, noise=0.0)
        assert check_servo_stability(cfg) == pytest.approx(0.5)
        trace = simulate_servo(cfg, 10, offset=8.0)
        assert np.all(np.diff(np.abs(trace.error)) < 0)

    def test_seeded_noise_repeats(self):
        cfg = ServoConfig()
        first = simulate_servo(cfg, 20, offset=5.0, seed=2)
        second = simulate_servo(cfg, 20, offset=5.0, seed=2)
        np.testing.assert_array_equal(first.measured, second.measured)

    def test_pause_error_bounded_by_charging_rate(self):
        cfg = ServoConfig(noise=0.0)
        sched = LaserSchedule(on_intervals=((0.0, 20.0),))
        trace = simulate_servo(
            cfg, 2000, offset=0.0, charging=REMOTE, schedule=sched, pauses=[(400, 1000)]
        )
        assert not trace.active[400:1000].any()
        assert np.isnan(trace.measured[400:1000]).all()
        gap_minutes = (trace.times[400:1000] - trace.times[400]) / 60.0
        bound = abs(trace.error[400]) + REMOTE.K_prime * gap_minutes
        assert np.all(np.abs(trace.error[400:1000]) <= bound + 1e-9)

    def test_needs_a_step(self):
        with pytest.raises(UsageError):
            simulate_servo(ServoConfig(), 0)


class TestFindTiltWindow:
    """Tests for the dU_O window search"""

    def test_bisected_edges(self, design, mocker):
        evaluator = mocker.Mock(side_effect=_fake_outcome())
        window = find_tilt_window(design, evaluator=evaluator)
        assert window.lower == pytest.approx(-0.012, abs=5e-5)
        assert window.upper == pytest.approx(0.008, abs=5e-5)
        assert window.center == pytest.approx(-0.002, abs=1e-4)
        assert window.half_width == pytest.approx(0.01, abs=1e-4)
        assert window.bracketed == (True, True)
        assert window.evaluations == evaluator.call_count
        assert window.to_dict()["force_zN"] == pytest.approx(
            window.force / ZEPTONEWTON
        )

    def test_unbracketed_edge(self, design):
        window = find_tilt_window(design, evaluator=_fake_outcome(upper=1.0))
        assert window.bracketed == (True, False)
        assert window.upper == pytest.approx(0.05)

    def test_no_separation(self, design):
        with pytest.raises(WindowNotFoundError):
            find_tilt_window(design, evaluator=_fake_outcome(lower=1.0, upper=2.0))

    def test_grid_too_small(self, design):
        with pytest.raises(UsageError):
            find_tilt_window(design, n_points=5, evaluator=_fake_outcome())

    @pytest.mark.slow
    def test_quasistatic_window_symmetric(self, design):
        """Test the window is centered, within a factor 3 of 800 zN, and one-well outside"""
        window = find_tilt_window(design.with_axis("T", 80e-6))
        assert abs(window.center) <= 0.1e-3
        assert 800.0 / 3.0 <= window.force / ZEPTONEWTON <= 2400.0
        same_well = (Classification.BOTH_LEFT, Classification.BOTH_RIGHT)
        for edge in (window.lower, window.upper):
            outside = quasistatic_outcome(design.with_axis("dU_O", 1.2 * edge))
            assert outside.classification in same_well

    @pytest.mark.slow
    @pytest.mark.parametrize("gamma_prime", [0.5, -0.5])
    def test_stray_field_shifts_window(self, design, gamma_prime):
        shifted = replace(design, basis=replace(design.basis, gamma_prime=gamma_prime))
        window = find_tilt_window(shifted.with_axis("T", 80e-6))
        assert window.center == pytest.approx(-gamma_prime / 333.0, abs=0.2e-3)
