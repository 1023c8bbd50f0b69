import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_floor_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*slope values were floored.*")
        yield


def model_a_sample(rng, n=500, sigma=0.5):
    X = np.column_stack([np.ones(n), rng.uniform(size=(n, 2))])
    Y = X @ np.array([1.0, 2.0, 3.0]) + sigma * rng.standard_normal(n)
    return X, Y


# acceptance summary: one line per criterion, collected from tests marked criterion(k)
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    k, title = m.args
    notes = [str(v) for key, v in item.user_properties if key == "detail"]
    _CRITERIA.setdefault(k, [title, []])[1].append((item.name, rep.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, results = _CRITERIA[k]
        failed = [name for name, ok, _ in results if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {k} [{title}]: {status}"
        if failed:
            line += f" (failing: {', '.join(failed)})"
        tr.write_line(line)
        for name, ok, notes in results:
            for note in notes:
                tr.write_line(f"    {name}: {note}")
