
import pytest

from tamc import corpus
from tamc.errors import SolverUnavailable
from tamc.smt import find_solver

_criteria: dict[int, dict] = {}


def _solver_available() -> bool:
    try:
        find_solver()
    except SolverUnavailable:
        return False
    return True


HAVE_SOLVER = _solver_available()


def pytest_configure(config):
    config.addinivalue_line("markers", "solver: needs an SMT solver binary")
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(config, items):
    if HAVE_SOLVER:
        return
    skip = pytest.mark.skip(reason="no SMT solver found (set TAMC_SOLVER or install z3)")
    for item in items:
        if "solver" in item.keywords:
            item.add_marker(skip)


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if call.excinfo is not None and call.excinfo.errisinstance(pytest.skip.Exception):
        return
    entry["ran"] = True
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number}: {e['title']}")


@pytest.fixture(scope="session")
def strb():
    return corpus.get_benchmark("strb").load()


@pytest.fixture(scope="session")
def floodmin():
    return corpus.get_benchmark("floodmin").load()


@pytest.fixture(scope="session")
def tendermint():
    return corpus.get_benchmark("tendermint1r").load()


@pytest.fixture(scope="session")
def strb_text():
    return corpus.get_benchmark("strb").path.read_text()
