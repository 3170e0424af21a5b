import numpy as np
import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion.

    The line is emitted in the terminal summary regardless of ``-s``.
    """
    label = request.node.get_closest_marker("criterion").args[0]

    yield label

    rep = getattr(request.node, "rep_call", None)
    _CRITERIA[request.node.nodeid] = (label, rep is not None and rep.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    verdicts = {}
    for label, ok in _CRITERIA.values():
        verdicts[label] = verdicts.get(label, True) and ok
    terminalreporter.section("acceptance criteria")
    for label in sorted(verdicts, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if verdicts[label] else 'FAIL'}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
