import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

#: (criterion, verdict, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{verdict} {name}: {detail}")
