from pathlib import Path

import numpy as np
import pytest

from adaptive_ramp.config import load_scenario, random_scenario_dict, read_json, scenario_from_dict

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
REF3 = SCENARIOS / "ref3.json"
FULL3 = SCENARIOS / "full3.json"


@pytest.fixture
def ref3():
    return load_scenario(REF3)


@pytest.fixture
def ref3_dict():
    return read_json(REF3)


@pytest.fixture
def params(ref3):
    return ref3.params


@pytest.fixture
def eq(ref3):
    return ref3.eq


def random_scenario(seed: int, n: int = 4, policy: str = "iid", horizon: int = 200,
                    epsilon: float = 0.2):
    rng = np.random.default_rng(seed)
    return scenario_from_dict(random_scenario_dict(rng, n, policy, horizon, seed, epsilon))


def omega_sample(scenario, rng):
    """Occupancy in the free-flow box and inflows inside their caps."""
    p, eq = scenario.params, scenario.eq
    x = eq.mu * (1.0 - rng.uniform(size=p.n))
    v = eq.v_max * rng.uniform(size=p.n)
    v[0] = eq.v_max[0] * (1.0 - rng.uniform())
    return x, v


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
