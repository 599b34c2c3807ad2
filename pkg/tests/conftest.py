"""Collects acceptance verdicts and prints them after the test run."""

VERDICTS = []


def record(number, title, passed, detail=""):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    VERDICTS.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
