"""Shared pytest wiring.

The acceptance tests record one verdict line per criterion; printing happens
in the terminal summary because that is the only spot pytest's fd-level
capture leaves alone.
"""

verdict_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not verdict_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdict_lines:
        terminalreporter.write_line(line)
