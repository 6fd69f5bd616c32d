import numpy as np
import pytest

from stochunfold.env import EnvironmentSpec, Phase, checkerboard, deterministic


@pytest.fixture
def two_phase_1d():
    """ShiftTorus L=2 in 1D, conductivities {1, 4}."""
    return EnvironmentSpec("torus", 1, (Phase(1.0), Phase(4.0)), L=2, config=[0, 1])


@pytest.fixture
def board_2d():
    return checkerboard(2, Phase(1.0), Phase(4.0))


@pytest.fixture
def torus_3x3():
    rng = np.random.default_rng(11)
    cfg = rng.integers(0, 3, 9)
    cfg[:3] = [0, 1, 2]
    return EnvironmentSpec("torus", 2, (Phase(1.0), Phase(4.0), Phase(2.5)), L=3, config=cfg)


@pytest.fixture
def iid_1d():
    return EnvironmentSpec("iid", 1, (Phase(1.0), Phase(4.0)), probs=[0.5, 0.5], seed=0)


@pytest.fixture
def iid_2d():
    return EnvironmentSpec("iid", 2, (Phase(1.0), Phase(4.0)), probs=[0.5, 0.5], seed=5)


@pytest.fixture
def homogeneous_2d():
    return deterministic(2, Phase(3.0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
