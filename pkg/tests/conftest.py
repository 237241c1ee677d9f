import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    def _report(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(ACCEPTANCE_LINES[n])
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
