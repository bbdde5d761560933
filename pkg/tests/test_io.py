"""
Tests for file formats and run manifests in src/ionsplit/io.py
"""

import math

import numpy as np
import pytest

from ionsplit.calibrate import DistanceScan, FrequencyScan
from ionsplit.drift import ChargingTrace
from ionsplit.errors import DataIOError, ParseError
from ionsplit.estimate import RabiDataset, RabiRecord
from ionsplit.io import (
    RunManifest,
    format_value,
    read_charging_trace,
    read_csv,
    read_distance_scan,
    read_distribution,
    read_frequency_scans,
    read_heating_points,
    read_json,
    read_manifest,
    read_rabi_dataset,
    read_waveform,
    validate_manifest,
    waveform_sidecar,
    write_charging_trace,
    write_distance_scan,
    write_distribution,
    write_frequency_scans,
    write_heating_points,
    write_manifest,
    write_rabi_dataset,
    write_waveform,
)
from ionsplit.phonons import PhononDistribution
from ionsplit.trapmodel import VoltageSet


def _text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _manifest(**overrides):
    values = dict(
        subcommand="design",
        config_hash="0" * 64,
        seed=None,
        started_at="2026-01-01T00:00:00+00:00",
        toolkit_version="0.1.0",
        argv=["design"],
        outputs=["waveform.csv"],
        wall_clock_s=0.5,
    )
    values.update(overrides)
    return RunManifest(**values)


class TestCsv:
    """Tests for the generic CSV layer"""

    def test_format_value(self):
        assert format_value(None) == ""
        assert format_value(True) == "1"
        assert format_value(np.int64(3)) == "3"
        assert format_value(0.1 + 0.2) == "0.3"
        assert format_value(np.float64(1.5e-7)) == "1.5e-07"

    def test_skips_comments_and_blank_lines(self, tmp_path):
        path = _text(tmp_path / "a.csv", "# note\n\na,b\n1,2\n\n# tail\n3,4\n")
        rows = read_csv(path, ("a", "b"))
        assert [n for n, _ in rows] == [4, 7]
        assert rows[1][1] == {"a": "3", "b": "4"}

    def test_missing_column(self, tmp_path):
        path = _text(tmp_path / "a.csv", "a\n1\n")
        with pytest.raises(ParseError) as exc_info:
            read_csv(path, ("a", "b"))
        assert exc_info.value.details["line"] == 1

    def test_unknown_column(self, tmp_path):
        path = _text(tmp_path / "a.csv", "a,b,c\n1,2,3\n")
        with pytest.raises(ParseError):
            read_csv(path, ("a", "b"))

    def test_ragged_row_reports_line(self, tmp_path):
        path = _text(tmp_path / "a.csv", "a,b\n1,2\n3\n")
        with pytest.raises(ParseError) as exc_info:
            read_csv(path, ("a", "b"))
        assert exc_info.value.details["line"] == 3
        assert exc_info.value.error_code == "PARSE_ERROR"

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError) as exc_info:
            read_csv(tmp_path / "absent.csv", ("a",))
        assert exc_info.value.error_code == "IO_ERROR"

    def test_bad_json(self, tmp_path):
        path = _text(tmp_path / "a.json", "{\n  'single': quotes\n}\n")
        with pytest.raises(ParseError):
            read_json(path)


class TestWaveformFiles:
    """Tests for waveform CSV and sidecar files"""

    def test_write_read(self, tmp_path, default_waveform):
        csv_path, json_path = write_waveform(tmp_path / "ramp.csv", default_waveform)
        assert json_path == waveform_sidecar(csv_path)
        restored = read_waveform(csv_path)
        assert restored.n_samples == default_waveform.n_samples
        assert restored.cp_index == default_waveform.cp_index
        assert restored.sample_period == default_waveform.sample_period
        assert restored.trajectory == default_waveform.trajectory
        np.testing.assert_allclose(restored.U_C, default_waveform.U_C, rtol=1e-11)
        np.testing.assert_array_equal(
            restored.reduced_accuracy, default_waveform.reduced_accuracy
        )

    def test_without_sidecar(self, tmp_path):
        path = _text(
            tmp_path / "w.csv",
            "t_s,U_C_V,U_S_V,U_O_V,dU_O_V\n0,1,2,3,0\n4e-7,1.5,2,3,0\n",
        )
        w = read_waveform(path)
        assert w.sample_period == pytest.approx(4e-7)
        assert w.cp_index is None
        assert not w.reduced_accuracy.any()

    def test_bad_cell(self, tmp_path):
        path = _text(tmp_path / "w.csv", "t_s,U_C_V,U_S_V,U_O_V,dU_O_V\n0,x,2,3,0\n")
        with pytest.raises(ParseError) as exc_info:
            read_waveform(path)
        assert exc_info.value.details["line"] == 2


class TestCalibrationFiles:
    """Tests for calibration data files"""

    def test_frequency_scans_grouped(self, tmp_path):
        background = VoltageSet(U_C=0.0, U_S=0.0, U_O=4.0)
        scans = [
            FrequencyScan(
                "C",
                (-6.0, -5.0),
                (2 * math.pi * 1.3e6, 2 * math.pi * 1.2e6),
                (2 * math.pi * 500.0, 2 * math.pi * 500.0),
                background,
            ),
            FrequencyScan("S", (-4.0,), (2 * math.pi * 0.9e6,), (2 * math.pi * 800.0,)),
        ]
        path = write_frequency_scans(tmp_path / "f.csv", scans)
        restored = read_frequency_scans(path)
        assert [s.segment for s in restored] == ["C", "S"]
        assert restored[0].background == background
        assert restored[0].omegas[1] == pytest.approx(2 * math.pi * 1.2e6)
        assert restored[1].sigmas[0] == pytest.approx(2 * math.pi * 800.0)

    def test_frequency_scan_rejects_unknown_segment(self, tmp_path):
        path = _text(
            tmp_path / "f.csv",
            "segment,voltage_V,f_Hz,sigma_Hz,U_C_V,U_S_V,U_O_V\nX,1,1e6,10,0,0,0\n",
        )
        with pytest.raises(ParseError):
            read_frequency_scans(path)

    def test_frequency_must_be_positive(self, tmp_path):
        path = _text(
            tmp_path / "f.csv",
            "segment,voltage_V,f_Hz,sigma_Hz,U_C_V,U_S_V,U_O_V\nC,1,-1e6,10,0,0,0\n",
        )
        with pytest.raises(ParseError):
            read_frequency_scans(path)

    def test_distance_scan_in_micrometres(self, tmp_path):
        scan = DistanceScan((VoltageSet(6.3, -7.5, 9.0),), (23.6e-6,), (0.2e-6,))
        restored = read_distance_scan(write_distance_scan(tmp_path / "d.csv", scan))
        assert restored.distances[0] == pytest.approx(23.6e-6)
        assert "23.6" in (tmp_path / "d.csv").read_text()

    def test_heating_points_sigmas_optional(self, tmp_path):
        points = [(2 * math.pi * 1e6, 3.4), (2 * math.pi * 0.2e6, 60.0)]
        path = write_heating_points(tmp_path / "h.csv", points)
        restored, sigmas = read_heating_points(path)
        assert sigmas is None
        assert restored[0][0] == pytest.approx(2 * math.pi * 1e6)
        _, sigmas = read_heating_points(write_heating_points(path, points, [0.1, 2.0]))
        assert sigmas == [0.1, 2.0]

    def test_charging_trace(self, tmp_path):
        trace = ChargingTrace(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.9, 5.6]))
        restored = read_charging_trace(write_charging_trace(tmp_path / "c.csv", trace))
        np.testing.assert_allclose(restored.U, trace.U)

    def test_charging_times_must_increase(self, tmp_path):
        path = _text(tmp_path / "c.csv", "t_min,U_mV\n0,0\n2,1\n1,2\n")
        with pytest.raises(ParseError):
            read_charging_trace(path)


class TestPhononFiles:
    """Tests for Rabi datasets and distributions"""

    def test_rabi_dataset_times_in_microseconds(self, tmp_path):
        data = RabiDataset((RabiRecord(dn=1, t=12e-6, successes=40, shots=100),))
        path = write_rabi_dataset(tmp_path / "r.csv", data)
        assert "12," in path.read_text().splitlines()[1]
        restored = read_rabi_dataset(path)
        assert restored.records[0].t == pytest.approx(12e-6)
        assert restored.records[0].shots == 100

    def test_rabi_record_violation_is_parse_error(self, tmp_path):
        path = _text(tmp_path / "r.csv", "dn,t_us,successes,shots\n0,1,300,200\n")
        with pytest.raises(ParseError) as exc_info:
            read_rabi_dataset(path)
        assert exc_info.value.details["line"] == 2

    def test_distribution(self, tmp_path):
        p = PhononDistribution(np.array([0.5, 0.3, 0.2]))
        restored = read_distribution(write_distribution(tmp_path / "p.csv", p))
        np.testing.assert_allclose(restored.probabilities, p.probabilities)

    def test_distribution_levels_must_start_at_zero(self, tmp_path):
        path = _text(tmp_path / "p.csv", "n,probability\n1,0.5\n2,0.5\n")
        with pytest.raises(ParseError):
            read_distribution(path)


class TestManifest:
    """Tests for run manifests"""

    def test_write_read(self, tmp_path):
        path = write_manifest(tmp_path, _manifest(seed=3))
        assert path.name == "manifest.json"
        restored = read_manifest(path)
        assert restored.seed == 3
        assert restored.outputs == ["waveform.csv"]

    def test_hash_pattern_enforced(self):
        with pytest.raises(DataIOError):
            validate_manifest(_manifest(config_hash="abc").to_dict())

    def test_extra_fields_rejected(self):
        payload = _manifest().to_dict()
        payload["extra"] = 1
        with pytest.raises(DataIOError):
            validate_manifest(payload)

    def test_status_enum(self, tmp_path):
        with pytest.raises(DataIOError):
            write_manifest(tmp_path, _manifest(status="maybe"))
