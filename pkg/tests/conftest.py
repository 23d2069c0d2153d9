import re

CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, printed after the run."""
    rows = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = CRITERION.search(getattr(rep, "nodeid", ""))
            if m is None:
                continue
            word = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            rows[int(m.group(1))] = (word, m.group(2).replace("_", " "))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(rows):
        word, label = rows[num]
        terminalreporter.write_line(f"criterion {num:2d}: {word}  {label}")
