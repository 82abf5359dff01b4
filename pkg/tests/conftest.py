import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # Acceptance criteria keep their own pass/fail ledger; surface it after
    # capture so the checklist shows up in plain `pytest -v` output.
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "CRITERION_RESULTS", None) if module else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
