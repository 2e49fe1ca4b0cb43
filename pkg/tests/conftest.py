import pytest

_LINES = []


@pytest.fixture
def criterion(capsys):
    """report(number, passed, title, detail): print one acceptance line."""

    def report(number, passed, title, detail):
        line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
