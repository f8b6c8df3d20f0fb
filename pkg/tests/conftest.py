import pytest

# filled by tests/test_acceptance.py: (criterion number, passed, detail)
CRITERIA: list = []


@pytest.fixture
def report():
    def record(number: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        CRITERIA.append((number, passed, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(CRITERIA):
        terminalreporter.write_line(line)
