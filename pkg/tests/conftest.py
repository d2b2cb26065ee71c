import warnings

import numpy as np
import pytest

from cnfdiff.core import CloudNetwork, CnfType, Instance, Sfc


def line_instance(budget=100.0, cpu=(4.0, 4.0, 4.0), allowed=None):
    """Three clouds on a line 0 - 1 - 2 and one 3-CNF chain.

    bandwidth 0<->1 is 10, 1<->2 is 5, message size 20, so an inter-cloud
    hop costs 2.0 on the first link and 4.0 on the second.
    """
    bw = np.array([[0, 10, 0], [10, 0, 5], [0, 5, 0]], dtype=float)
    allowed = allowed or [{0, 1, 2}] * 3
    net = CloudNetwork(np.array(cpu), np.array([8.0, 8.0, 8.0]), bw, allowed, np.array([0, 1, 2]))
    cat = [CnfType(0, 1.0, 1.0, 1.0), CnfType(1, 2.0, 1.0, 0.5), CnfType(2, 3.0, 2.0, 0.25)]
    cost = np.array([[5.0, 6.0, 7.0], [3.0, 9.0, 1.0], [4.0, 4.0, 4.0]])
    sfc = Sfc.chain(0, [0, 1, 2], [3.0, 4.0], budget)
    return Instance(net, [sfc], cat, cost, 20.0, {"name": "line"})


def diamond_instance(budget=100.0):
    """Two fully linked clouds and a diamond 0 -> {1, 2} -> 3 with unequal branches."""
    bw = np.array([[0, 40], [40, 0]], dtype=float)
    net = CloudNetwork(np.array([10.0, 10.0]), np.array([10.0, 10.0]), bw, [{0, 1}, {0, 1}])
    cat = [CnfType(0, 1.0, 1.0, 1.0), CnfType(1, 1.0, 1.0, 3.0)]
    edges = [(0, 1, 5.0), (0, 2, 5.0), (1, 3, 5.0), (2, 3, 5.0)]
    sfc = Sfc(0, [0, 1, 0, 0], edges, budget)
    return Instance(net, [sfc], cat, np.array([[1.0, 2.0], [2.0, 1.0]]), 80.0, {"name": "diamond"})


@pytest.fixture
def line():
    return line_instance()


@pytest.fixture
def diamond():
    return diamond_instance()


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"))
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
