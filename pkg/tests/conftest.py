import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def shapes_corpus():
    from jawgrasp import shapes
    return {
        "cube": shapes.box(0.05, 0.05, 0.05, divisions=4),
        "sphere": shapes.icosphere(0.03, 3),
        "cylinder": shapes.cylinder(0.02, 0.08, 32, 4),
        "l_bracket": shapes.l_bracket(),
        "torus": shapes.torus(0.04, 0.012, 48, 16),
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
