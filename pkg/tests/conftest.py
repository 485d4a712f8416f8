import pytest

_VERDICTS = pytest.StashKey[dict]()


class Verdict:
    """One PASS/FAIL line for an acceptance criterion."""

    def __init__(self, store, number, title):
        self.store = store
        self.number = number
        self.title = title
        self.store[number] = f"FAIL criterion {number}: {title} (did not complete)"

    def record(self, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {self.number}: {self.title} ({detail})"
        self.store[self.number] = line
        print(line)
        assert ok, line


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Factory ``verdict(number, title)``; a criterion that raises stays FAIL."""
    store = request.config.stash[_VERDICTS]
    return lambda number, title: Verdict(store, number, title)


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
