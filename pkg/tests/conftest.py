"""Shared pytest plumbing.

The acceptance tests record one verdict line per criterion; printing them from
inside a test would be swallowed by capture, so they are replayed here in a
terminal-summary section at the end of the run.
"""

_verdict_lines: list[str] = []


def record_verdict(line: str) -> None:
    _verdict_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _verdict_lines:
        terminalreporter.section("acceptance criteria")
        for line in _verdict_lines:
            terminalreporter.write_line(line)
