import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = []  # (number, passed, detail) filled in by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
