import time

import numpy as np
import pytest

from safeimp import rbd

Q0 = np.array([0.0, -1.0, 1.0, -0.5, 0.5, -1.2, 0.0])


@pytest.fixture(scope="session")
def model():
    return rbd.load_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def single_link(L=0.5, mass=2.0, izz=0.1, com=None):
    """One revolute joint about world z, link along x."""
    com = [-L / 2, 0.0, 0.0] if com is None else com
    link = rbd.Link(a=L, alpha=0.0, d=0.0, theta_offset=0.0, mass=mass, com=com,
                    inertia=np.diag([0.01, izz, izz]))
    return rbd.RobotModel(links=(link,), gravity=np.zeros(3))


class ScenarioCache:
    """Full closed-loop runs shared by every test in the session."""

    def __init__(self):
        self._traces = {}
        self.seconds = {}

    def get(self, preset, mode="proposed"):
        from safeimp import harness

        key = (preset, mode)
        if key not in self._traces:
            t0 = time.perf_counter()
            self._traces[key] = harness.run_scenario(harness.preset(preset), mode)
            self.seconds[key] = time.perf_counter() - t0
        return self._traces[key]


@pytest.fixture(scope="session")
def scenarios():
    return ScenarioCache()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
