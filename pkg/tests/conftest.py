"""Shared pytest hooks: acceptance criteria print a one-line verdict each."""
ACCEPTANCE = []


def record(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
