import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in getattr(module, "NOTES", []):
        terminalreporter.write_line(line)
    for n in sorted(results):
        terminalreporter.write_line(results[n])
