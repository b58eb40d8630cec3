import numpy as np
import pytest

import superlim as sl
from superlim import cumulant as cu
from superlim import skeleton as sk

ALL = ("feller1", "poissonic", "twosite", "threesite")
MULTI = ("twosite", "threesite")

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def scenario():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = sl.builtin(name)
        return cache[name]
    return get


@pytest.fixture(scope="session")
def solved(scenario):
    """``name -> (scenario, ExtinctionData)`` with shared caches."""
    cache = {}

    def get(name):
        if name not in cache:
            s = scenario(name)
            cache[name] = (s, cu.extinction_v(s))
        return cache[name]
    return get


@pytest.fixture(scope="session")
def model(solved):
    cache = {}

    def get(name):
        if name not in cache:
            s, ext = solved(name)
            cache[name] = sk.build_skeleton(s, ext)
        return cache[name]
    return get


@pytest.fixture(scope="session")
def big_w(model):
    """10^6 W samples at horizon 15 (shared by the slow checks)."""
    cache = {}

    def get(name, seed=2024):
        key = (name, seed)
        if key not in cache:
            cache[key] = sk.sample_W(model(name), 15.0, 1_000_000, seed=seed)
        return cache[key]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
