import _report


def pytest_terminal_summary(terminalreporter):
    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_report.LINES):
            terminalreporter.write_line(_report.LINES[key])
