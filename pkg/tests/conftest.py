import pytest

# criterion name -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``done = criterion(name)`` marks ``name`` failed until ``done(detail)`` runs after the last check."""

    def begin(name):
        ACCEPTANCE[name] = (False, "a check failed")
        return lambda detail="": ACCEPTANCE.__setitem__(name, (True, detail))

    return begin


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
