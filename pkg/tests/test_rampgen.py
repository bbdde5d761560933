"""
Tests for separation waveform design in src/ionsplit/rampgen.py
"""

import math

import numpy as np
import pytest

from ionsplit.errors import RangeError, RateError, SaturationError
from ionsplit.rampgen import (
    MeshAnchor,
    RampConfig,
    RampMesh,
    TrajectorySpec,
    alpha_from_distance,
    build_waveform,
    design_distances,
    distance_at,
    distance_for_alpha,
    distance_untruncated,
    frequency_trace,
    reverse_waveform,
    voltages_from_alpha,
)
from ionsplit.trapmodel import coefficients_from_voltages, cp_distance


@pytest.fixture
def mesh(basis):
    return RampMesh.from_voltages(basis)


class TestTrajectorySpec:
    """Tests for the distance trajectory"""

    def test_endpoints_of_untruncated_clock(self):
        spec = TrajectorySpec()
        assert distance_untruncated(spec, 0.0) == pytest.approx(4.45e-6)
        assert distance_untruncated(spec, spec.untruncated_duration) == pytest.approx(400e-6)

    def test_truncated_window(self):
        """Test the emitted ramp starts at 10% and ends at 70% of the full clock"""
        spec = TrajectorySpec()
        assert spec.untruncated_duration == pytest.approx(80e-6 / 0.6)
        assert distance_at(spec, 0.0) == pytest.approx(4.5468e-6, rel=1e-4)
        assert distance_at(spec, spec.T) == pytest.approx(158.32e-6, rel=1e-3)

    def test_monotone(self):
        spec = TrajectorySpec()
        d = design_distances(spec, 200, 2.5e6)
        assert np.all(np.diff(d) > 0)

    def test_out_of_range_time(self):
        with pytest.raises(RangeError):
            distance_at(TrajectorySpec(), 81e-6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"d_i": 10e-6, "d_f": 5e-6},
            {"T": 0.0},
            {"truncate_head": 0.5},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrajectorySpec(**kwargs)


class TestRampMesh:
    """Tests for the alpha-interpolation mesh"""

    def test_default_anchors(self, mesh):
        """Test start, CP and mirrored end anchors"""
        assert len(mesh.anchors) == 3
        assert mesh.alpha_start == pytest.approx(1.6328e7, rel=1e-12)
        assert mesh.alpha_end == pytest.approx(-mesh.alpha_start)
        assert mesh.cp_position == 1
        assert mesh.cp_anchor == MeshAnchor(0.0, 4.35, 9.0)

    def test_refined_holds_outer_voltage(self, basis):
        """Test the refined mesh keeps U_O at its CP value on both sides of the CP"""
        refined = RampMesh.from_voltages(basis, refined=True)
        assert len(refined.anchors) == 5
        assert refined.anchors[1].U_O == 9.0
        assert refined.anchors[3].U_O == 9.0

    def test_requires_cp_anchor(self):
        with pytest.raises(ValueError):
            RampMesh(anchors=(MeshAnchor(1e7, 0.0, 0.0), MeshAnchor(-1e7, -7.8, 0.0)))

    def test_requires_decreasing_alpha(self):
        with pytest.raises(ValueError):
            RampMesh(
                anchors=(
                    MeshAnchor(0.0, 4.35, 9.0),
                    MeshAnchor(1e7, 0.0, 0.0),
                )
            )

    def test_dict_round_trip(self, mesh):
        assert RampMesh.from_dict(mesh.to_dict()) == mesh


class TestAlphaInversion:
    """Tests for the alpha <-> voltages <-> distance chain"""

    def test_cp_voltages(self, mesh, basis):
        """Test the CP anchor solves to U_C of about 0.54 V"""
        v = voltages_from_alpha(0.0, mesh, basis)
        assert v.U_C == pytest.approx(0.54263, rel=1e-4)
        assert v.U_S == 4.35
        assert v.U_O == 9.0

    def test_quoted_cp_set_is_off_band(self, basis):
        """Test U_S = -7.5 V with U_O = +9 V needs U_C of about 6.35 V for alpha = 0"""
        legacy = RampMesh.from_voltages(basis, cp=(-7.5, 9.0))
        v = voltages_from_alpha(0.0, legacy, basis)
        assert v.U_C == pytest.approx(6.3451, rel=1e-4)
        assert coefficients_from_voltages(basis, v).beta == pytest.approx(3.93e14, rel=2e-3)

    @pytest.mark.parametrize("alpha", [1.6e7, 5e6, 0.0, -4e6, -1.6e7])
    def test_alpha_exact(self, mesh, basis, alpha):
        """Test the solved center voltage reproduces the requested alpha"""
        v = voltages_from_alpha(alpha, mesh, basis)
        assert coefficients_from_voltages(basis, v).alpha == pytest.approx(alpha, abs=1e-3)

    def test_cp_distance(self, mesh, basis, constants):
        """Test the CP distance follows from the CP quartic coefficient"""
        beta = coefficients_from_voltages(basis, voltages_from_alpha(0.0, mesh, basis)).beta
        assert beta == pytest.approx(1.3985e14, rel=2e-3)
        d = distance_for_alpha(0.0, mesh, basis, constants)
        assert d == pytest.approx(cp_distance(beta, constants), rel=1e-10)
        assert d == pytest.approx(29.02e-6, rel=5e-3)

    @pytest.mark.parametrize("U_S", [1.0, 2.5, 4.35, 6.0, 7.5])
    def test_cp_distance_band(self, basis, constants, U_S):
        """Test CP sets across the calibrated quartic range keep d_CP in 25-55 um"""
        cp_mesh = RampMesh.from_voltages(basis, cp=(U_S, 9.0))
        d = distance_for_alpha(0.0, cp_mesh, basis, constants)
        assert 25e-6 <= d <= 55e-6

    @pytest.mark.parametrize("d", [5e-6, 15e-6, 29e-6, 60e-6, 150e-6])
    def test_inversion_round_trip(self, mesh, basis, constants, d):
        alpha = alpha_from_distance(d, mesh, basis, constants)
        assert distance_for_alpha(alpha, mesh, basis, constants) == pytest.approx(d, rel=1e-9)

    def test_unreachable_distance(self, mesh, basis, constants):
        with pytest.raises(RangeError):
            alpha_from_distance(1e-3, mesh, basis, constants)
        with pytest.raises(RangeError):
            alpha_from_distance(1e-6, mesh, basis, constants)

    def test_alpha_outside_mesh(self, mesh, basis):
        with pytest.raises(RangeError):
            voltages_from_alpha(2e7, mesh, basis)


class TestBuildWaveform:
    """Tests for the sampled separation waveform"""

    def test_sampling(self, default_waveform):
        assert default_waveform.n_samples == 200
        assert default_waveform.sample_period == pytest.approx(4e-7)
        assert default_waveform.duration == pytest.approx(80e-6)

    def test_alpha_decreases_through_cp(self, default_waveform, basis):
        """Test alpha falls monotonically and crosses zero at the CP sample"""
        alpha, _, _ = default_waveform.coefficients(basis)
        assert np.all(np.diff(alpha) < 0)
        cp = default_waveform.cp_index
        assert cp is not None and 0 < cp < default_waveform.n_samples - 1
        assert cp == int(np.argmin(np.abs(alpha)))
        assert np.array_equal(default_waveform.reduced_accuracy, alpha < 0)

    def test_distances_follow_trajectory(self, default_waveform, basis, constants, mesh):
        spec = default_waveform.trajectory
        alpha, _, _ = default_waveform.coefficients(basis)
        targets = design_distances(spec, default_waveform.n_samples, default_waveform.sample_rate)
        for k in (0, 50, default_waveform.cp_index, 150, 199):
            d = distance_for_alpha(float(alpha[k]), mesh, basis, constants)
            assert d == pytest.approx(targets[k], rel=1e-6)

    def test_channels_within_range(self, default_waveform):
        for name in ("U_C", "U_S", "U_O"):
            assert np.max(np.abs(default_waveform.channel(name))) <= 10.0
        assert np.all(default_waveform.dU_O == 0.0)
        assert default_waveform.U_C[0] < 0 < default_waveform.U_C[default_waveform.cp_index]

    def test_annotations(self, default_waveform):
        notes = default_waveform.annotations()
        assert notes["n_samples"] == 200
        assert notes["cp_index"] == default_waveform.cp_index
        cp = default_waveform.cp_index
        assert notes["reduced_accuracy_from"] in (cp, cp + 1)
        assert notes["trajectory"]["T_s"] == pytest.approx(80e-6)
        assert len(notes["design_alpha_range"]) == 2

    def test_cp_offset_window(self, default_waveform, mesh, basis, constants):
        """Test the CP offset is full at the CP sample and vanishes at the ramp ends"""
        shifted = build_waveform(
            TrajectorySpec(), mesh, RampConfig(dU_C_cp=0.01), basis, constants
        )
        delta = shifted.U_C - default_waveform.U_C
        assert delta[default_waveform.cp_index] == pytest.approx(0.01)
        assert delta[0] == pytest.approx(0.0, abs=1e-12)
        assert delta[-1] == pytest.approx(0.0, abs=1e-12)
        assert np.all(delta >= -1e-12)
        np.testing.assert_array_equal(shifted.U_S, default_waveform.U_S)

    def test_cp_offset_needs_crossing(self, mesh, basis, constants):
        short = TrajectorySpec(d_i=4.45e-6, d_f=20e-6, T=20e-6)
        with pytest.raises(RangeError):
            build_waveform(short, mesh, RampConfig(dU_C_cp=0.01), basis, constants)

    def test_rate_limit(self, mesh, basis, constants):
        with pytest.raises(RateError):
            build_waveform(
                TrajectorySpec(), mesh, RampConfig(sample_rate=5e6), basis, constants
            )

    def test_saturation(self, mesh, basis, constants):
        """Test a channel beyond the voltage limit is reported by name"""
        with pytest.raises(SaturationError) as exc_info:
            build_waveform(
                TrajectorySpec(), mesh, RampConfig(voltage_limit=6.0), basis, constants
            )
        assert exc_info.value.details["channel"] == "U_C"
        assert exc_info.value.details["count"] > 0


class TestReverseWaveform:
    """Tests for the time-reversed (merging) waveform"""

    def test_mirror(self, default_waveform):
        reversed_w = reverse_waveform(default_waveform)
        assert reversed_w.is_reversed
        np.testing.assert_array_equal(reversed_w.U_C, default_waveform.U_C[::-1])
        assert reversed_w.cp_index == default_waveform.n_samples - 1 - default_waveform.cp_index

    def test_involution(self, default_waveform):
        assert reverse_waveform(reverse_waveform(default_waveform)).equals(default_waveform)


class TestFrequencyTrace:
    """Tests for the local COM frequency along the ramp"""

    def test_cp_frequency_and_distance(self, default_waveform, basis, constants):
        """Test the CP sample sits at about 147 kHz and 29 um"""
        trace = frequency_trace(default_waveform, basis, constants)
        cp = default_waveform.cp_index
        f_cp = trace.omega[cp] / (2 * math.pi)
        assert trace.omega[0] / (2 * math.pi) == pytest.approx(1.37e6, rel=0.02)
        assert 110e3 <= f_cp <= 190e3
        assert f_cp == pytest.approx(147e3, rel=0.03)
        assert 25e-6 <= trace.distance[cp] <= 55e-6
        assert np.array_equal(trace.reduced_accuracy, default_waveform.reduced_accuracy)

    def test_minimum_just_before_cp(self, default_waveform, basis, constants):
        """Test the COM minimum leads the CP by a few samples and is 0.5% shallower"""
        trace = frequency_trace(default_waveform, basis, constants)
        cp = default_waveform.cp_index
        assert 0 <= cp - trace.minimum_index <= 5
        assert trace.omega.min() >= 0.99 * trace.omega[cp]
        assert np.all(np.diff(trace.omega[: trace.minimum_index + 1]) < 0)
