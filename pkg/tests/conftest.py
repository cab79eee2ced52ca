from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# Filled by tests/test_acceptance.py: criterion number -> summary line.
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
