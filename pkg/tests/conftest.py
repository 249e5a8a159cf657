from __future__ import annotations

import numpy as np
import pytest

from netflow.expander import solve_soliton
from netflow.network import Fan
from netflow.resolution import parse_descriptor

CROSS_ANGLES = np.radians([45.0, 135.0, 225.0, 315.0])


@pytest.fixture(scope="session")
def cross_fan():
    return Fan.from_angles(CROSS_ANGLES)


@pytest.fixture(scope="session")
def cross_soliton(cross_fan):
    return solve_soliton(cross_fan, parse_descriptor("12|34", 4))


@pytest.fixture(scope="session")
def cross_soliton_other(cross_fan):
    return solve_soliton(cross_fan, parse_descriptor("23|41", 4))


@pytest.fixture(scope="session")
def cross_disconnected(cross_fan):
    return solve_soliton(cross_fan, parse_descriptor("{12}{34}", 4))


@pytest.fixture(scope="session")
def triod_soliton():
    fan = Fan.from_angles(np.radians([90.0, 210.0, 330.0]))
    return solve_soliton(fan, parse_descriptor("123", 3))
