import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
