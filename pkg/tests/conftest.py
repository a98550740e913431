from __future__ import annotations

import numpy as np
import pytest

# acceptance verdict lines, printed once at the end of the session
VERDICTS: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--skip-stretch", action="store_true", default=False,
                     help="skip the optional reference comparison (criterion 13)")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
