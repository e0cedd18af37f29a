"""Shared test configuration: collects acceptance-criterion verdicts and
prints one line per criterion at the end of the run."""

acceptance_results = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, ok, detail in sorted(acceptance_results):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} [{status}] {label}: {detail}")
