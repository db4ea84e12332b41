import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from osgsim import config as cfgmod  # noqa: E402


@pytest.fixture(scope="session")
def default_cfg():
    return cfgmod.default_config()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance-criterion PASS/FAIL lines after capture ends."""
    lines = getattr(sys.modules.get("test_acceptance"), "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
