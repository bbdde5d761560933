"""
Pytest configuration and shared fixtures for ionsplit tests
"""

import logging
import sys
from pathlib import Path

import pytest

# Add src/ to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from ionsplit.config import CONFIG_ENV_VAR, ProjectConfig, clear_config_cache  # noqa: E402
from ionsplit.constants import PhysicalConstants  # noqa: E402
from ionsplit.trapmodel import SegmentBasis  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """Reset logging handlers, the config cache and config env vars around every test"""
    for name in (CONFIG_ENV_VAR, "IONSPLIT_LOG_LEVEL", "IONSPLIT_LOG_FORMAT", "IONSPLIT_LOG_FILE"):
        monkeypatch.delenv(name, raising=False)
    clear_config_cache()
    yield
    package_logger = logging.getLogger("ionsplit")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)
    clear_config_cache()


@pytest.fixture
def constants():
    """40Ca+ constants"""
    return PhysicalConstants.for_species("40Ca+")


@pytest.fixture
def basis():
    """Calibrated reference segment basis"""
    return SegmentBasis()


@pytest.fixture
def project_config():
    """Built-in default configuration"""
    return ProjectConfig()


@pytest.fixture
def design(project_config):
    """Default separation design"""
    return project_config.to_design()


@pytest.fixture(scope="session")
def default_waveform():
    """Default 80 us separation ramp, built once per session"""
    from ionsplit.rampgen import build_waveform

    config = ProjectConfig()
    basis = config.to_basis()
    return build_waveform(
        config.to_trajectory(),
        config.to_mesh(basis),
        config.to_ramp(),
        basis,
        config.to_constants(),
    )
