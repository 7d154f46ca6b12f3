import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lipext.geometry import make_region
from lipext.meshes import circle_polygon, icosphere

FIXTURES = Path(__file__).parent / "fixtures" / "derived.json"

settings.register_profile("lipext", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lipext")

# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def derived():
    """Frozen reference values produced by ``lipext oracle``."""
    return json.loads(FIXTURES.read_text())


@pytest.fixture(scope="session")
def gon64():
    return circle_polygon(64)


@pytest.fixture(scope="session")
def half_arc(gon64):
    return make_region(gon64, arc=(0.0, np.pi))


@pytest.fixture(scope="session")
def sphere2():
    return icosphere(2)


@pytest.fixture(scope="session")
def cap2(sphere2):
    return make_region(sphere2, cap=(np.array([0.0, 0.0, 1.0]), 1.2))
