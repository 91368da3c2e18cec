import pytest

# acceptance results, appended by tests/test_acceptance.py
AC_LINES: list[str] = []


@pytest.fixture
def ac_report():
    def record(tag: str, ok: bool, detail: str):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        AC_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if AC_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(AC_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
