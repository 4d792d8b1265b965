import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def trained_model():
    """The desk-scale classifier, trained into the cache on first use."""
    from vrap.models import ModelSpec, ensure_trained

    return ensure_trained(ModelSpec())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
