from __future__ import annotations

import math

import pytest

from sntorsion.params import OpticalParams, PendulumParams, builtin_config, load_config


@pytest.fixture(scope="session")
def reference_cfg():
    return load_config(builtin_config("reference"))


@pytest.fixture(scope="session")
def upgrade_cfg():
    return load_config(builtin_config("upgrade_quadratic"))


@pytest.fixture
def desk_pendulum():
    return PendulumParams(0.14, 2 * math.pi * 0.6, 50.0, 0.6, 1.0, 300.0)


@pytest.fixture
def optics():
    return OpticalParams(1550e-9, 8e-6, 3.5e5, 80.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
