import numpy as np
import pytest

from evpose.events import SensorGeometry


@pytest.fixture
def small_geometry():
    return SensorGeometry(width=32, height=24)


@pytest.fixture
def davis_geometry():
    return SensorGeometry(width=346, height=260)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
