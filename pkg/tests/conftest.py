import numpy as np
import pytest

from rcm_handeye import sim
from rcm_handeye.camera import laparoscope_default


@pytest.fixture(scope="session")
def cam():
    return laparoscope_default()


@pytest.fixture(scope="session")
def noiseless(cam):
    """Default moving scene, static ground truth, no pixel noise."""
    return sim.generate(sim.SimConfig(), cam)


@pytest.fixture(scope="session")
def frozen_scene(cam):
    """ECM and instruments held still: every loss term vanishes at the truth."""
    cfg = sim.SimConfig(
        n_frames=20,
        ecm_amplitude=(0.0, 0.0, 0.0),
        psm_amplitude=((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        psm_rot_amplitude=0.0,
    )
    return sim.generate(cfg, cam)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
