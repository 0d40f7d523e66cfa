import numpy as np
import pytest

from scentrunc.config import demo_config
from scentrunc.scenarios import sample_scenarios
from scentrunc.system import LinearSystem, stack_system
from scentrunc.truncation import build_truncation_mapping, map_scenarios

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class Demo:
    """The double-integrator example, built once per session."""

    def __init__(self, seed=0):
        self.cfg = demo_config().with_overrides(**{"seeds.scenario": seed})
        self.system = self.cfg.linear_system()
        self.stacked = stack_system(self.system)
        self.constraints = self.cfg.constraint_spec()
        self.x0 = self.cfg.x0_array()
        self.sampler = self.cfg.sampler_spec()
        self.scenarios = sample_scenarios(self.sampler, self.cfg.samples.n_samples, 5, seed, nw=4)
        self._clouds = {}

    def mapping(self, prune=True):
        if prune not in self._clouds:
            m = build_truncation_mapping(self.constraints.fx_stage, self.constraints.fu_stage,
                                         self.stacked, prune=prune)
            self._clouds[prune] = (m, map_scenarios(m, self.scenarios))
        return self._clouds[prune]


@pytest.fixture(scope="session")
def demo():
    return Demo(0)


@pytest.fixture(scope="session")
def small_system():
    rng = np.random.default_rng(7)
    sysm = LinearSystem(rng.normal(size=(2, 2)) * 0.6, rng.normal(size=(2, 1)),
                        rng.normal(size=(2, 1)), 2)
    return sysm, stack_system(sysm)
