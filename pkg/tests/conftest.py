import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request, capsys):
    """Record one acceptance line ``PASS/FAIL Cn: detail`` and assert it."""

    def record(tag, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {tag}: {detail}"
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:-1])):
            terminalreporter.write_line(line)
