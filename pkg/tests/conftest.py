"""
conftest.py
===========
pytest configuration: puts the repository root on ``sys.path`` and
provides shared device fixtures.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

_repo_root = Path(__file__).resolve().parent.parent
if str(_repo_root) not in sys.path:
    sys.path.insert(0, str(_repo_root))

from fsimlab.device_sim import DeviceModel  # noqa: E402


@pytest.fixture
def ideal_device() -> DeviceModel:
    """Noiseless device with ideal flux lines and an unquantised DAC."""
    return DeviceModel(t_phi=None, single_qubit_error=0.0).without_distortion()


@pytest.fixture
def default_device() -> DeviceModel:
    return DeviceModel()


@pytest.fixture
def small_delta_grid() -> np.ndarray:
    return np.linspace(-40.0, 280.0, 5)


@pytest.fixture
def small_coupler_grid(ideal_device) -> np.ndarray:
    return np.linspace(0.0, ideal_device.coupler.guard_bias, 4)
