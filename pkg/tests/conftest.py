"""Shared pytest wiring.

Acceptance tests append one verdict line per criterion here; printing
them from the terminal-summary hook keeps the PASS/FAIL record visible
even though pytest captures in-test stdout.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_lines):
            terminalreporter.write_line(line)
