"""Prints the acceptance-criteria verdicts after the run summary.

test_acceptance.py appends one line per criterion to ACCEPTANCE; showing
them unconditionally keeps the pass/fail ledger visible without -s.
"""

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
