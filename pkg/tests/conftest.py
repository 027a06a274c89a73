import pytest

CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


@pytest.fixture(scope="session")
def criteria_log(request):
    """Collects ``(number, passed, detail)`` lines for the acceptance summary."""
    return request.config.stash[CRITERIA]


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(CRITERIA, []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in lines:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
