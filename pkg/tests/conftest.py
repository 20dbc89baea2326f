import pytest

RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.stash[RESULTS_KEY] = []


@pytest.fixture
def detail():
    """Measurements a criterion test wants echoed next to its PASS/FAIL line."""
    return {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    facts = item.funcargs.get("detail") or {}
    text = "  ".join(f"{k}={v}" for k, v in facts.items())
    verdict = "PASS" if rep.passed else "FAIL"
    item.config.stash[RESULTS_KEY].append((number, f"criterion {number:>2} {verdict}  {title}  {text}".rstrip()))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[RESULTS_KEY]
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
