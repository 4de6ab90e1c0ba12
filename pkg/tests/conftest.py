import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records the outcome line for acceptance criterion ``n``."""

    def record(n, ok, detail):
        CRITERIA[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import CRITERION_NAMES

    ran = [n for n in CRITERION_NAMES if n in CRITERIA or any(
        r.nodeid.endswith(f"test_criterion_{n}") for r in terminalreporter.stats.get("failed", []))]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in ran:
        ok, detail = CRITERIA.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {n} ({CRITERION_NAMES[n]}): {'PASS' if ok else 'FAIL'}  {detail}")
