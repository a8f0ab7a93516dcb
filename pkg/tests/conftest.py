import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """``acceptance(criterion, ok, detail)`` records one PASS/FAIL line for the summary."""

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {criterion}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
