"""
Tests for configuration loading and validation in src/ionsplit/config.py
"""

import math
import os

import pytest

from ionsplit import config as config_module
from ionsplit.config import (
    CONFIG_ENV_VAR,
    ProjectConfig,
    apply_overrides,
    load_config,
    load_project_config,
)
from ionsplit.errors import ConfigError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestProjectConfig:
    """Tests for the validated configuration model"""

    def test_defaults(self, project_config):
        assert project_config.species.name == "40Ca+"
        assert project_config.trajectory.duration_us == 80.0
        assert project_config.drift.preset == "remote_375nm"

    def test_from_yaml_text(self):
        cfg = ProjectConfig.from_yaml_text("trajectory:\n  duration_us: 160\n")
        assert cfg.trajectory.duration_us == 160.0
        assert cfg.mesh.cp_U_O_V == 9.0

    def test_empty_text_gives_defaults(self):
        assert ProjectConfig.from_yaml_text("").config_hash() == ProjectConfig().config_hash()

    def test_root_must_be_mapping(self):
        with pytest.raises(ConfigError):
            ProjectConfig.from_yaml_text("- 1\n- 2\n")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError):
            ProjectConfig.from_yaml_text("trajectory: [unclosed\n")

    def test_unknown_key_forbidden(self):
        with pytest.raises(ConfigError) as exc_info:
            ProjectConfig.from_dict({"trajectory": {"bogus": 1}})
        locs = [err["loc"] for err in exc_info.value.details["errors"]]
        assert "trajectory.bogus" in locs

    @pytest.mark.parametrize(
        "data",
        [
            {"species": {"name": "99Xx+"}},
            {"filter": {"discretization": "tustin"}},
            {"simulation": {"integrator": "euler"}},
            {"drift": {"window_points": 5}},
            {"drift": {"window_evaluator": "guess"}},
            {"logging": {"format": "xml"}},
            {"basis": {"sigma": {"alpha_X": 1.0}}},
            {"awg": {"resolution_mV": -1.0}},
        ],
    )
    def test_validators(self, data):
        with pytest.raises(ConfigError):
            ProjectConfig.from_dict(data)

    def test_yaml_round_trip_keeps_hash(self, project_config):
        restored = ProjectConfig.from_yaml_text(project_config.to_yaml())
        assert restored.config_hash() == project_config.config_hash()

    def test_config_hash(self, project_config):
        digest = project_config.config_hash()
        assert len(digest) == 64
        assert int(digest, 16) >= 0
        changed = project_config.with_overrides(["ramp.dU_O_mV=1.5"])
        assert changed.config_hash() != digest
        assert changed.ramp.dU_O_mV == 1.5


class TestOverrides:
    """Tests for section.key=value overrides"""

    def test_values_parse_as_scalars(self):
        merged = apply_overrides(
            {"trajectory": {"duration_us": 80.0}}, ["trajectory.duration_us=160"]
        )
        assert merged["trajectory"]["duration_us"] == 160

    def test_null_override(self, project_config):
        cfg = project_config.with_overrides(["drift.preset=null"])
        assert cfg.drift.preset is None
        assert cfg.to_charging().K_prime == 0.0

    @pytest.mark.parametrize("override", ["trajectory.duration_us", "duration_us=160", "=3"])
    def test_malformed(self, override):
        with pytest.raises(ConfigError):
            apply_overrides({}, [override])

    def test_override_validated(self, project_config):
        with pytest.raises(ConfigError):
            project_config.with_overrides(["trajectory.unknown=1"])

    def test_no_overrides_returns_same(self, project_config):
        assert project_config.with_overrides([]) is project_config


class TestLoadConfig:
    """Tests for file loading and caching"""

    def test_missing_default_uses_builtins(self, tmp_path, monkeypatch):
        monkeypatch.setattr(config_module, "CONFIG_PATH", tmp_path / "absent.yaml")
        data = load_config()
        assert data["trajectory"]["duration_us"] == 80.0

    def test_missing_explicit_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_missing_env_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "absent.yaml"))
        with pytest.raises(ConfigError):
            load_config()

    def test_env_file(self, tmp_path, monkeypatch):
        path = _write(tmp_path / "cfg.yaml", "servo:\n  kp: 0.4\n")
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        assert load_project_config().servo.kp == 0.4

    def test_non_mapping_file(self, tmp_path):
        path = _write(tmp_path / "cfg.yaml", "just a string\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_returns_copies(self, tmp_path):
        path = _write(tmp_path / "cfg.yaml", "servo:\n  kp: 0.4\n")
        first = load_config(path)
        first["servo"]["kp"] = 99.0
        assert load_config(path)["servo"]["kp"] == 0.4

    def test_cache_keyed_on_mtime(self, tmp_path):
        path = _write(tmp_path / "cfg.yaml", "servo:\n  kp: 0.4\n")
        stat = path.stat()
        assert load_config(path)["servo"]["kp"] == 0.4

        _write(path, "servo:\n  kp: 0.5\n")
        os.utime(path, ns=(stat.st_atime_ns, stat.st_mtime_ns))
        assert load_config(path)["servo"]["kp"] == 0.4
        assert load_config(path, force_reload=True)["servo"]["kp"] == 0.5

        _write(path, "servo:\n  kp: 0.6\n")
        os.utime(path, ns=(stat.st_atime_ns, stat.st_mtime_ns + 5_000_000_000))
        assert load_config(path)["servo"]["kp"] == 0.6

    def test_load_project_config_with_overrides(self, tmp_path):
        path = _write(tmp_path / "cfg.yaml", "servo:\n  kp: 0.4\n")
        cfg = load_project_config(path, ["servo.ki=0.01"])
        assert (cfg.servo.kp, cfg.servo.ki) == (0.4, 0.01)


class TestBuilders:
    """Tests for the SI builders"""

    def test_units(self, project_config):
        assert project_config.to_trajectory().d_i == pytest.approx(4.45e-6)
        assert project_config.to_awg().resolution == pytest.approx(3e-4)
        assert project_config.to_sim_config().timestep == pytest.approx(1e-9)
        assert project_config.rabi_omega() == pytest.approx(2 * math.pi * 1e5)
        assert project_config.to_basis().gamma_O == 333.0

    def test_design_without_quantization_or_filter(self, project_config):
        cfg = project_config.with_overrides(["awg.quantize=false", "filter.enabled=false"])
        design = cfg.to_design()
        assert design.awg is None
        assert design.filter is None

    def test_charging_preset_with_override(self, project_config):
        charging = project_config.with_overrides(["drift.K_prime_mV_per_min=5.0"]).to_charging()
        assert charging.K_prime == 5.0
        assert charging.delta == 0.074

    def test_schedule(self, project_config):
        sched = project_config.to_schedule()
        assert sched.on_intervals == ((0.0, 120.0),)
        assert sched.span == (0.0, 240.0)

    def test_invalid_schedule_is_config_error(self, project_config):
        cfg = project_config.with_overrides(["drift.schedule_end_min=60"])
        with pytest.raises(ConfigError):
            cfg.to_schedule()

    def test_invalid_chain_is_config_error(self, project_config):
        cfg = project_config.with_overrides(["estimate.n_steps=10", "estimate.burn_in=0.95"])
        with pytest.raises(ConfigError):
            cfg.to_mcmc(seed=0)

    def test_mcmc_and_prior(self, project_config):
        assert project_config.to_mcmc(seed=5).seed == 5
        assert project_config.to_prior().n_th == (0.0, 1000.0)
        assert project_config.to_servo().kp == 0.7
