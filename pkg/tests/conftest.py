import pytest


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def record(request):
    """Log one ``PASS``/``FAIL`` line for an acceptance criterion."""
    def rec(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        request.config._criterion_lines.append(line)
        print(line)
        return ok
    return rec


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
