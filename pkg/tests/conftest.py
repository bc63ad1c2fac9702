import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# acceptance verdicts, one line per criterion, echoed after the run
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
