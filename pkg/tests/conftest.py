import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a one-line acceptance verdict for the terminal summary."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, ok: bool, detail: str) -> None:
        results.append((number, ok, detail))

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(results):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
