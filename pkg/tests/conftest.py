import pytest

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion, printed in the terminal summary."""
    def record(label: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE.append((label, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0].rstrip("."))):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")
