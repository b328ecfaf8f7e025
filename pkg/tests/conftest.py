import numpy as np
import pytest

from pqii import SyntheticSpec, gen_synthetic

_acceptance_lines: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    _acceptance_lines.append((number, f"{status}  criterion {number:>2}: {title}"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    return gen_synthetic(SyntheticSpec(n_rows=2000, n_dims=16, n_clusters=16, spread=1.0, seed=3))
