import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
SAMPLE_PARAMS = "**.parameter = 50\n"
SAMPLE_FACTORS = "**.factA = ${ 50 , 100 }\n**.factB = ${ 1 , 2 }\n"

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def fakesim_cmd():
    """Command template for the lightweight fake simulator in tests/fakesim.py."""
    return f"{sys.executable} {HERE / 'fakesim.py'} --config {{config}} --out {{outdir}}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
