import math

import numpy as np
import pytest

from modeflux.correlation import GaussianCorrelation
from modeflux.geometry import WidthProfile, find_turning_points
from modeflux.transport import TransportProblem

K_PRESET = 2 * math.pi
SIGMA_PRESET = math.sqrt(0.003)
ELL_PRESET = 3.0


@pytest.fixture(scope="session")
def preset_profile():
    return WidthProfile.linear(-1000.0, 0.0, 20.0, 20.49, cap=0.2)


@pytest.fixture(scope="session")
def preset_layout(preset_profile):
    return find_turning_points(K_PRESET, preset_profile, 1000.5)


@pytest.fixture(scope="session")
def preset_problem(preset_profile):
    return TransportProblem(K_PRESET, SIGMA_PRESET, GaussianCorrelation(), preset_profile,
                            ELL_PRESET)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the acceptance summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
