import numpy as np
import pytest

from anosovlab.torus_maps import MapModel

BASE_POINT = np.array([0.1, 0.2, 0.3])


@pytest.fixture(scope="session")
def linear():
    return MapModel("linear", 0.0)


@pytest.fixture(scope="session")
def dissipative():
    return MapModel("dissipative", 0.1)


@pytest.fixture(scope="session")
def conservative():
    return MapModel("conservative", 0.1)


@pytest.fixture(scope="session", params=["linear", "dissipative", "conservative"])
def any_map(request):
    return MapModel(request.param, 0.0 if request.param == "linear" else 0.1)


@pytest.fixture
def base_point():
    return BASE_POINT.copy()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
