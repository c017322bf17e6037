import numpy as np
import pytest

from odeftc.scenario import load_scenario, scenario_from_dict


def small_doc(N=1, edges=(), n=2, kappa=50.0, **sim):
    """Two-state oscillator observed through its first component by every node."""
    doc = {
        "name": "small",
        "plant": {"n": n, "A": [[0, 1], [-1, -0.5]], "W": [[0.1, 0], [0, 0.2]],
                  "x0": [0.5, -0.5], "P0": [[1, 0], [0, 1]]},
        "sensors": [{"C": [[1, 0]], "R": [[0.1 + 0.05 * i]]} for i in range(N)],
        "graph": {"N": N, "edges": [list(e) for e in edges]},
        "params": {"kappa": kappa, "alpha": 20, "gamma": 0.7, "xi": 1},
        "sim": {"h": 1e-3, "t_end": 0.5, "realizations": 4, "seed": 7, "stride": 10,
                "init": "matched", **sim},
    }
    return doc


@pytest.fixture
def small():
    return lambda **kw: scenario_from_dict(small_doc(**kw))


@pytest.fixture(scope="session")
def ltv():
    return load_scenario("paper-ltv")


@pytest.fixture(scope="session")
def lti():
    return load_scenario("paper-lti")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
