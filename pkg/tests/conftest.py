import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Print and keep one ``PASS``/``FAIL`` line per acceptance criterion."""

    def _record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
