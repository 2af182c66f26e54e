import logging
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from tourspend.synth import SynthConfig, generate  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def small_synth():
    """A compact synthetic dataset shared by read-only tests."""
    config = SynthConfig(seed=11, n_origins=12,
                         destinations={"COL": 6, "NLD": 6, "GRC": 3})
    return generate(config)


@pytest.fixture(scope="session")
def default_synth():
    return generate(SynthConfig(seed=0))


@pytest.fixture(scope="session")
def synth_files(tmp_path_factory, small_synth):
    out = tmp_path_factory.mktemp("synth")
    return small_synth.write(out)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
