import json
from pathlib import Path

import pytest

ORACLE_PATH = Path(__file__).parent / "oracles" / "oracles.json"

# (number, title, passed, detail) per acceptance criterion, filled by test_acceptance.
CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def oracles():
    return json.loads(ORACLE_PATH.read_text())


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {detail}")
