import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance criterion verdict lines where they are visible
    even though pytest captures stdout during the tests themselves."""
    for name, mod in list(sys.modules.items()):
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(mod, "REPORT_LINES", [])
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)
