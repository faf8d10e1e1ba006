import sys

import numpy as np
import pytest

from depthmotion.geometry import Intrinsics
from depthmotion.synthetic import build_snippet, make_scene


@pytest.fixture(scope="session")
def lateral_scene():
    return make_scene("lateral", height=64, width=64, seed=0)


@pytest.fixture(scope="session")
def lateral_snippet(lateral_scene):
    return build_snippet(lateral_scene, count=100, seed=0)


@pytest.fixture
def k100():
    return Intrinsics(100.0, 100.0, 50.0, 50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
