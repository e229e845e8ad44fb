"""
Shared fixtures for the calibration simulator test suite.
"""

import sys
from pathlib import Path

import pytest

# Add the parent directory to the path so we can import our modules
sys.path.append(str(Path(__file__).parent.parent))

from config.experiment_config import ExperimentConfig, get_preset
from physics.detector import DetectorConfig

REPO_ROOT = Path(__file__).parent.parent


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests (run the full CLI or worker pool)"
    )
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (statistical runs over many trajectories)"
    )


@pytest.fixture
def detector_cfg() -> DetectorConfig:
    """Reference detector: I0=10, I1=10.4, S_I=0.4, dt=0.05 (gamma_m = 0.1)."""
    return DetectorConfig(i0=10.0, i1=10.4, s_i=0.4, dt=0.05)


@pytest.fixture
def baseline_config() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture
def quick_config() -> ExperimentConfig:
    return get_preset('quick')


@pytest.fixture
def configs_dir() -> Path:
    return REPO_ROOT / 'configs'
