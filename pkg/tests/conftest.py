import numpy as np
import pytest

from eeggnn.dataio import SynthSpec, synth_generate


@pytest.fixture
def small_ds():
    return synth_generate(SynthSpec(4, 10, 6, 3, 2, class_separation=2.0, noise_std=0.5, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_LINES = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "acceptance":
            _LINES.append(value)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
