import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def emit(criterion: int, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {criterion:>2} {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
