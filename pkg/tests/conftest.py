from __future__ import annotations

import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in helpers.RESULTS:
            terminalreporter.write_line(line)
