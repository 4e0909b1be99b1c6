"""Shared pytest hooks: per-criterion PASS/FAIL summary for the acceptance suite."""
import pytest

CRITERIA = {
    1: "trim self-consistency",
    2: "modal structure",
    3: "Dryden filter",
    4: "reward examples",
    5: "Q-update arithmetic",
    6: "training convergence",
    7: "FAA step behaviour",
    8: "robustness under gust + noise",
    9: "determinism",
    10: "property suites",
}

_outcomes: dict = {}
_notes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def note(request):
    """``note(text)`` attaches a measured value to the test's criterion summary line."""
    m = request.node.get_closest_marker("criterion")

    def add(text):
        if m is not None:
            _notes.setdefault(m.args[0], []).append(str(text))

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    n = m.args[0]
    if rep.failed:
        _outcomes[n] = False
    elif rep.when == "call" and rep.passed:
        _outcomes.setdefault(n, True)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        status = "PASS" if _outcomes[n] else "FAIL"
        tr.write_line(f"criterion {n:>2} {status}  {CRITERIA[n]}")
        for text in _notes.get(n, []):
            tr.write_line(f"              {text}")
