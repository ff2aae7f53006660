"""Shared pytest plumbing: the acceptance suite registers one line per
criterion here so the end-of-run summary always shows them, whether the
criterion passed or failed."""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
