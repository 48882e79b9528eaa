import pytest

_results = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_results] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the terminal summary prints them all."""
    log = request.config.stash[_results]

    def record(number, title, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if bool(ok) else "FAIL")
        log.append(f"criterion {number} [{status}] {title}: {detail}".rstrip(": "))
        print(log[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_results, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
