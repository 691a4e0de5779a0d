import pytest

from bugsev.synth import synthetic_corpus

HEADER = "Project,Bug_ID,Resolution_Status,Short_Description,Bug_Type,Priority_Label,Severity_Label\n"


@pytest.fixture
def write_csv(tmp_path):
    """Write CSV text (header prepended unless given) and return the path."""

    def _write(body: str, header: str | None = HEADER, name: str = "bugs.csv"):
        path = tmp_path / name
        path.write_text((header or "") + body, encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def separable_corpus():
    return synthetic_corpus(500, 500, seed=1)


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(40, 40, seed=5, signal=0.8, missing_type_rate=0.1)


# -- acceptance reporting -----------------------------------------------------
# Tests marked ``criterion("...")`` get one PASS/FAIL/SKIP line in the
# terminal summary.

_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        _CRITERIA.append((status, name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"{status:4}  {name}")
