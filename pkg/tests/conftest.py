import pytest

RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def check(label: str, ok: bool, detail: str = "") -> None:
        RESULTS[label] = (bool(ok), detail)
        assert ok, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        head = label.split()[0]
        return (0, int(head)) if head.isdigit() else (1, label)

    for label in sorted(RESULTS, key=order):
        ok, detail = RESULTS[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {label}  {detail}")
