import pytest

from cfbench import dataio
from cfbench.models import IdmModel


@pytest.fixture(scope="session")
def sinusoid_segment():
    """Gentle noiseless IDM segment: no bound clamping, no velocity floor."""
    profile = dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=2.0, period=70.0)
    return dataio.generate_synthetic(profile, IdmModel(), duration=300.0, dt=1.0, seed=21)


@pytest.fixture(scope="session")
def stopgo_segment():
    """Stop-and-go IDM segment with full standstill phases."""
    profile = dataio.SpeedProfile("stopgo", base_speed=6.0, period=80.0)
    return dataio.generate_synthetic(profile, IdmModel(), duration=300.0, dt=1.0, seed=3)


_acceptance_outcomes = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_acceptance_outcomes):
        name = nodeid.split("::")[-1]
        outcome = _acceptance_outcomes[nodeid]
        label = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{label}: {name}")
