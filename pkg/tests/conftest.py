import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from impedlab.geometry import CoatingPartition, build_quadrature, build_surface
from impedlab.scatter import WaveConfig, sphere_series

settings.register_profile(
    "impedlab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("impedlab")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def reference():
    return json.loads((DATA / "reference.json").read_text())


@pytest.fixture(scope="session")
def unit_sphere():
    return build_surface({"kind": "sphere", "radius": 1.0})


@pytest.fixture(scope="session")
def bumpy():
    return build_surface({"kind": "harmonic", "base": 1.0 * np.sqrt(4 * np.pi),
                          "coeffs": [[0, 0, 0.0], [2, 0, 0.3]]})


@pytest.fixture(scope="session")
def wave():
    return WaveConfig(1.0, (0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def oracle(wave):
    return sphere_series(wave, 1.0, 1.0)


@pytest.fixture(scope="session")
def full_mesh(unit_sphere):
    return build_quadrature(unit_sphere, CoatingPartition(), (16, 32))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record the one-line verdict of an acceptance criterion (echoed in the terminal summary)."""

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
