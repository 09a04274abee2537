import re

CRITERION = re.compile(r"test_acceptance\.py::test_c(\d\d)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = CRITERION.search(getattr(rep, "nodeid", ""))
            if m and rep.when in ("call", "setup"):
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((int(m.group(1)), f"criterion {int(m.group(1)):2d} {m.group(2)}: {status}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
