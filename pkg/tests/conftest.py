"""Shared pytest wiring.

The acceptance tests record one verdict per criterion; the terminal-summary
hook below prints them as a compact pass/fail table at the end of the run so
the verdicts are visible even when every test passes.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(results):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:02d} {name}: {verdict} ({detail})")
