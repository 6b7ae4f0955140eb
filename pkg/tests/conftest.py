import sys
import numpy as np
import pytest

from d2dalloc.bench import ScenarioConfig, generate
from d2dalloc.model import (D2DGroup, GainTable, NetworkInstance, RadioConstants)


def make_instance(g_cell, g_d2c, g_self, g_c2d, g_cross, constants=None):
    """Instance straight from gain arrays; positions are placeholders."""
    g_cell = np.asarray(g_cell, dtype=float)
    M = g_cell.size
    K = len(g_self)
    groups = []
    for k in range(K):
        D = np.asarray(g_self[k]).shape[1]
        groups.append(D2DGroup(k, [0.0, 0.0], np.ones((D, 2))))
    gains = GainTable(g_cell, np.asarray(g_d2c, dtype=float).reshape(K, M),
                      tuple(np.asarray(a, float) for a in g_self),
                      tuple(np.asarray(a, float) for a in g_c2d),
                      tuple(np.asarray(a, float) for a in g_cross))
    return NetworkInstance(np.zeros((M, 2)), groups, gains,
                           constants or RadioConstants.from_db())


@pytest.fixture
def small_instance():
    return generate(ScenarioConfig(K=2, M=3, trials=1), 11)


@pytest.fixture
def default_instance():
    return generate(ScenarioConfig(), 5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
