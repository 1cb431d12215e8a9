import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_line():
    def record(number, ok, detail, note=""):
        line = f"criterion {number:<3} {'PASS' if ok else 'FAIL'}  {detail}"
        if note:
            line += f"  [{note}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record
