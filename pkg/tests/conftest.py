import numpy as np
import pytest

from undercrowd import synth


@pytest.fixture(scope="session")
def small_data():
    """A simulated scenario with rides and signals, no faults."""
    return synth.simulate(synth.SynthScenario(n_dates=14, seed=11))


@pytest.fixture(scope="session")
def small_obs(small_data):
    return small_data.observations


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(line[1])
